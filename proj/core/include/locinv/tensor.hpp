#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace locinv {

using scalar_t = double;

// Dense row-major tensor. Rank is the length of `shape`; rank 0 is not used,
// scalars are shape {1}.
struct Tensor {
    std::vector<int> shape;
    std::vector<scalar_t> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s, scalar_t fill = 0.0);
    static Tensor scalar(scalar_t v);
    static Tensor from(std::vector<int> s, std::vector<scalar_t> d);

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const;
    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool empty() const { return data.empty(); }

    scalar_t& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    scalar_t operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // 2-d [rows x cols] and 3-d [c x h x w] accessors.
    scalar_t& at2(int r, int c);
    scalar_t at2(int r, int c) const;
    scalar_t& at3(int c, int y, int x);
    scalar_t at3(int c, int y, int x) const;

    bool all_finite() const;
    scalar_t sum() const;
    scalar_t mean() const;
    scalar_t max_abs() const;
    scalar_t max() const;
    scalar_t min() const;

    void fill(scalar_t v);
    std::string shape_str() const;
};

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);  // elementwise
Tensor operator*(scalar_t s, const Tensor& a);

bool bitwise_equal(const Tensor& a, const Tensor& b);
scalar_t max_abs_diff(const Tensor& a, const Tensor& b);
void require_shape(const Tensor& t, const std::vector<int>& shape, const std::string& what);

}  // namespace locinv
