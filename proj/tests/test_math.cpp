#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "locinv/autograd.hpp"
#include "locinv/ddim.hpp"
#include "locinv/errors.hpp"
#include "locinv/optimizer.hpp"
#include "locinv/serialize.hpp"
#include "locinv/tensor.hpp"

using namespace locinv;

static Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = dist(rng);
    return t;
}

TEST_CASE("tensor basics") {
    Tensor t({2, 3}, 1.5);
    CHECK(t.numel() == 6);
    CHECK(t.sum() == doctest::Approx(9.0));
    t.at2(1, 2) = -4.0;
    CHECK(t.max_abs() == doctest::Approx(4.0));
    CHECK_THROWS_AS(Tensor({0, 3}), DataError);
    CHECK_THROWS_AS(Tensor({2, 2}) + Tensor({2, 3}), DataError);
    CHECK(bitwise_equal(t, t));
}

TEST_CASE("tensor container round trip") {
    std::mt19937_64 rng(11);
    std::map<std::string, Tensor> named;
    named["a"] = random_tensor({3, 4, 2}, rng);
    named["b"] = random_tensor({7}, rng);
    std::string path = "/tmp/locinv_test_tensors.bin";
    write_tensor_file(path, named, TensorDType::f64);
    auto loaded = read_tensor_file(path);
    CHECK(loaded.size() == 2);
    CHECK(bitwise_equal(loaded.at("a"), named.at("a")));
    CHECK(bitwise_equal(loaded.at("b"), named.at("b")));

    write_tensor_file(path, named, TensorDType::f32);
    auto lossy = read_tensor_file(path);
    CHECK(max_abs_diff(lossy.at("a"), named.at("a")) < 1e-6);
}

// Central-difference gradient check of a scalar-valued graph builder.
template <typename Builder>
static void check_gradients(const Tensor& x0, Builder build, double tol = 1e-6) {
    ag::Var leaf = ag::Var::leaf(x0);
    ag::Var loss = build(leaf);
    leaf.zero_grad();
    ag::backward(loss);
    Tensor analytic = leaf.grad();

    const double h = 1e-5;
    for (int64_t i = 0; i < x0.numel(); ++i) {
        Tensor xp = x0, xm = x0;
        xp[i] += h;
        xm[i] -= h;
        double fp = build(ag::Var::constant(xp)).value()[0];
        double fm = build(ag::Var::constant(xm)).value()[0];
        double fd = (fp - fm) / (2 * h);
        CHECK(analytic[i] == doctest::Approx(fd).epsilon(tol).scale(std::max(1.0, std::abs(fd))));
    }
}

TEST_CASE("autograd: elementwise and reductions") {
    std::mt19937_64 rng(1);
    Tensor x = random_tensor({3, 4}, rng, 0.2, 1.5);
    check_gradients(x, [](ag::Var v) {
        return ag::sum(ag::mul(ag::silu(v), ag::add_scalar(ag::scale(v, 0.5), 0.3)));
    });
    check_gradients(x, [](ag::Var v) { return ag::mean(ag::vpow(v, 1.7)); });
    check_gradients(x, [](ag::Var v) { return ag::dot(ag::relu(v), v); });
}

TEST_CASE("autograd: matmul, softmax, layer norm") {
    std::mt19937_64 rng(2);
    Tensor x = random_tensor({4, 5}, rng);
    Tensor w = random_tensor({5, 3}, rng);
    Tensor g = random_tensor({5}, rng, 0.5, 1.5);
    Tensor b = random_tensor({5}, rng);
    check_gradients(x, [&](ag::Var v) {
        return ag::sum(ag::softmax_rows(ag::matmul(v, ag::Var::constant(w))));
    });
    check_gradients(x, [&](ag::Var v) {
        return ag::sum(ag::mul(ag::matmul_nt(v, v), ag::Var::constant(Tensor({4, 4}, 0.3))));
    });
    check_gradients(x, [&](ag::Var v) {
        return ag::sum(ag::layer_norm_rows(v, ag::Var::constant(g), ag::Var::constant(b)));
    });
    // weight-side gradients
    check_gradients(w, [&](ag::Var v) {
        return ag::sum(ag::softmax_rows(ag::matmul(ag::Var::constant(x), v)));
    });
}

TEST_CASE("autograd: conv, pooling, spatial ops") {
    std::mt19937_64 rng(3);
    Tensor x = random_tensor({2, 4, 4}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    check_gradients(x, [&](ag::Var v) {
        return ag::sum(ag::conv3x3(v, ag::Var::constant(w), ag::Var::constant(b)));
    });
    check_gradients(w, [&](ag::Var v) {
        return ag::sum(
            ag::mul(ag::conv3x3(ag::Var::constant(x), v, ag::Var::constant(b)),
                    ag::Var::constant(Tensor({3, 4, 4}, 0.7))));
    });
    check_gradients(x, [&](ag::Var v) { return ag::sum(ag::avg_pool2(v)); });
    check_gradients(x, [&](ag::Var v) { return ag::sum(ag::upsample2(v)); });
    check_gradients(x, [&](ag::Var v) {
        return ag::sum(ag::concat_channels(v, ag::scale(v, 2.0)));
    });
    check_gradients(x, [&](ag::Var v) {
        return ag::sum(ag::from_cell_rows(ag::to_cell_rows(v), 4, 4));
    });
}

TEST_CASE("autograd: cosine") {
    std::mt19937_64 rng(4);
    Tensor a = random_tensor({8}, rng, 0.1, 1.0);
    Tensor b = random_tensor({8}, rng, 0.1, 1.0);
    check_gradients(a, [&](ag::Var v) { return ag::cosine(v, ag::Var::constant(b)); });
    // cos(a, a) = 1 exactly
    ag::Var v = ag::Var::constant(a);
    CHECK(ag::cosine(v, v).value()[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("adam converges on a quadratic") {
    ag::Var x = ag::Var::leaf(Tensor::from({2}, {4.0, -3.0}));
    Adam adam(0.1);
    for (int i = 0; i < 300; ++i) {
        x.zero_grad();
        ag::Var loss = ag::dot(x, x);
        ag::backward(loss);
        adam.step({x});
    }
    CHECK(x.value().max_abs() < 1e-2);
}

TEST_CASE("noise schedule invariants") {
    NoiseSchedule sched = NoiseSchedule::scaled_linear(1000, 50);
    CHECK(sched.alpha_bar.size() == 51);
    CHECK(sched.alpha_bar[0] == doctest::Approx(1.0).epsilon(1e-15));
    for (int t = 1; t <= 50; ++t) CHECK(sched.alpha_bar[t] < sched.alpha_bar[t - 1]);
    CHECK(sched.timestep_map[50] == 999);
    CHECK_THROWS_AS(NoiseSchedule::scaled_linear(10, 50), DataError);

    NoiseSchedule bad = sched;
    bad.alpha_bar[0] = 0.999;
    CHECK_THROWS_AS(bad.validate(), DataError);
}

static NoiseSchedule scalar_sched(std::vector<scalar_t> abar) {
    NoiseSchedule s;
    s.T = static_cast<int>(abar.size()) - 1;
    s.alpha_bar = std::move(abar);
    s.timestep_map.assign(s.alpha_bar.size(), 0);
    for (size_t i = 0; i < s.timestep_map.size(); ++i) s.timestep_map[i] = static_cast<int>(i);
    return s;
}

TEST_CASE("predict_x0 closed form") {
    NoiseSchedule s = scalar_sched({1.0, 0.25});
    Tensor z = Tensor::scalar(2.0), eps = Tensor::scalar(1.0);

    // eps = 0 -> z / sqrt(abar)
    CHECK(ddim::predict_x0(z, 1, Tensor::scalar(0.0), s)[0] == doctest::Approx(4.0).epsilon(1e-12));
    // hand-evaluated closed form
    CHECK(ddim::predict_x0(z, 1, eps, s)[0] ==
          doctest::Approx(2.26794919243112270647).epsilon(1e-12));
    // abar -> 1 approaches the identity (the sqrt(1-abar) term dominates)
    NoiseSchedule s1 = scalar_sched({1.0, 1.0 - 1e-15});
    CHECK(ddim::predict_x0(z, 1, eps, s1)[0] == doctest::Approx(2.0).epsilon(1e-7));
    // t = 0 undefined
    CHECK_THROWS_AS(ddim::predict_x0(z, 0, eps, s), DataError);
}

TEST_CASE("ddim step back closed form") {
    // abar_t = 0.25, abar_prev = 0.5, z = 1, eps = 0.5
    NoiseSchedule s = scalar_sched({1.0, 0.5, 0.25});
    Tensor z = Tensor::scalar(1.0), eps = Tensor::scalar(0.5);
    Tensor x0 = ddim::predict_x0(z, 2, eps, s);
    CHECK(x0[0] == doctest::Approx(1.13397459621556135324).epsilon(1e-12));
    Tensor zp = ddim::step_back(z, 2, eps, s);
    CHECK(zp[0] == doctest::Approx(1.15539451727057428645).epsilon(1e-12));
    CHECK_THROWS_AS(ddim::step_back(z, 0, eps, s), DataError);
}

TEST_CASE("step forward then back with the same eps is the identity") {
    std::mt19937_64 rng(5);
    NoiseSchedule sched = NoiseSchedule::scaled_linear(1000, 10);
    for (int t = 0; t < 10; ++t) {
        Tensor z = random_tensor({4, 6, 6}, rng);
        Tensor eps = random_tensor({4, 6, 6}, rng);
        Tensor forward = ddim::step_forward(z, t, eps, sched);
        Tensor back = ddim::step_back(forward, t + 1, eps, sched);
        CHECK(max_abs_diff(back, z) < 1e-10);
    }
    // eps = 0 with equal alpha bars is the identity map
    NoiseSchedule s = scalar_sched({1.0, 0.5, 0.5 - 1e-12});
    Tensor z = Tensor::scalar(0.73);
    CHECK(ddim::step_back(z, 2, Tensor::scalar(0.0), s)[0] == doctest::Approx(0.73).epsilon(1e-6));
}

TEST_CASE("fnv checksum is stable") {
    const char* s = "locinv";
    CHECK(fnv1a64(s, 6) == fnv1a64(s, 6));
    CHECK(fnv1a64(s, 6) != fnv1a64("locinw", 6));
    CHECK(checksum_hex(fnv1a64(s, 6)).size() == 16);
}
