#include "locinv/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "locinv/errors.hpp"

namespace locinv {

static int64_t shape_numel(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
        if (d <= 0) throw DataError("tensor dimension must be positive, got " + std::to_string(d));
        n *= d;
    }
    return n;
}

Tensor::Tensor(std::vector<int> s, scalar_t fill_v) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(shape_numel(shape)), fill_v);
}

Tensor Tensor::scalar(scalar_t v) {
    Tensor t({1});
    t.data[0] = v;
    return t;
}

Tensor Tensor::from(std::vector<int> s, std::vector<scalar_t> d) {
    if (shape_numel(s) != static_cast<int64_t>(d.size()))
        throw DataError("tensor data size does not match shape");
    Tensor t;
    t.shape = std::move(s);
    t.data = std::move(d);
    return t;
}

int Tensor::dim(int i) const {
    if (i < 0 || i >= ndim()) throw DataError("tensor dim index out of range");
    return shape[static_cast<size_t>(i)];
}

scalar_t& Tensor::at2(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
scalar_t Tensor::at2(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }

scalar_t& Tensor::at3(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
}
scalar_t Tensor::at3(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
}

bool Tensor::all_finite() const {
    for (scalar_t v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

scalar_t Tensor::sum() const {
    scalar_t s = 0;
    for (scalar_t v : data) s += v;
    return s;
}

scalar_t Tensor::mean() const { return data.empty() ? 0.0 : sum() / static_cast<scalar_t>(data.size()); }

scalar_t Tensor::max_abs() const {
    scalar_t m = 0;
    for (scalar_t v : data) m = std::max(m, std::abs(v));
    return m;
}

scalar_t Tensor::max() const {
    scalar_t m = -std::numeric_limits<scalar_t>::infinity();
    for (scalar_t v : data) m = std::max(m, v);
    return m;
}

scalar_t Tensor::min() const {
    scalar_t m = std::numeric_limits<scalar_t>::infinity();
    for (scalar_t v : data) m = std::min(m, v);
    return m;
}

void Tensor::fill(scalar_t v) { std::fill(data.begin(), data.end(), v); }

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

static void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw DataError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

Tensor operator+(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = a;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += b[i];
    return out;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b[i];
    return out;
}

Tensor operator*(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = a;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b[i];
    return out;
}

Tensor operator*(scalar_t s, const Tensor& a) {
    Tensor out = a;
    for (auto& v : out.data) v *= s;
    return out;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape && a.data == b.data;
}

scalar_t max_abs_diff(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "max_abs_diff");
    scalar_t m = 0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

void require_shape(const Tensor& t, const std::vector<int>& shape, const std::string& what) {
    if (t.shape != shape) {
        Tensor want;
        want.shape = shape;
        throw DataError(what + ": expected shape " + want.shape_str() + ", got " + t.shape_str());
    }
}

}  // namespace locinv
