#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dyadit/autodiff.hpp"
#include "dyadit/checkpoint.hpp"
#include "dyadit/nn.hpp"
#include "dyadit/tensor.hpp"
#include "gradcheck.hpp"

using namespace dyadit;
using ad::Var;

TEST_SUITE_BEGIN("core");

TEST_CASE("tensor shapes and matmul variants agree") {
    Rng rng(3);
    Tensor a = Tensor::randn({5, 7}, rng);
    Tensor b = Tensor::randn({7, 4}, rng);
    Tensor c = matmul(a, b);
    CHECK(c.dim(0) == 5);
    CHECK(c.dim(1) == 4);

    Tensor c_tn = matmul_tn(transpose(a), b);
    Tensor c_nt = matmul_nt(a, transpose(b));
    for (std::int64_t i = 0; i < c.size(); ++i) {
        CHECK(c[i] == doctest::Approx(c_tn[i]).epsilon(1e-12));
        CHECK(c[i] == doctest::Approx(c_nt[i]).epsilon(1e-12));
    }

    CHECK_THROWS_AS(matmul(a, a), ShapeError);
    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
}

TEST_CASE("rng is deterministic and normal moments are sane") {
    Rng r1(42), r2(42);
    for (int i = 0; i < 100; ++i) CHECK(r1.uniform() == r2.uniform());
    Rng r3(7);
    double sum = 0.0, sum2 = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        double x = r3.normal();
        sum += x;
        sum2 += x * x;
    }
    CHECK(std::fabs(sum / n) < 0.01);
    CHECK(sum2 / n == doctest::Approx(1.0).epsilon(0.02));
}

namespace {

// FD check for ops on plain leaf tensors (not module parameters).
double fd_check_single(const std::function<Var(const Var&)>& op, Tensor input, double h = 1e-6) {
    nn::ParameterStore store;
    Var x = store.add("x", std::move(input));
    auto make_loss = [&] { return ad::mean_all(ad::mul(op(x), op(x))); };
    return test::grad_check(store, make_loss, h).max_rel_err;
}

}  // namespace

TEST_CASE("autodiff ops match finite differences") {
    Rng rng(11);
    CHECK(fd_check_single([](const Var& x) { return ad::leaky_relu(x, 0.2); },
                          Tensor::randn({4, 5}, rng)) < 1e-6);
    CHECK(fd_check_single([](const Var& x) { return ad::sigmoid(x); }, Tensor::randn({4, 5}, rng)) <
          1e-6);
    CHECK(fd_check_single([](const Var& x) { return ad::gelu(x); }, Tensor::randn({4, 5}, rng)) <
          1e-6);
    CHECK(fd_check_single([](const Var& x) { return ad::softmax_rows(x); },
                          Tensor::randn({3, 6}, rng)) < 1e-6);
    CHECK(fd_check_single([](const Var& x) { return ad::upsample_linear_2x(x); },
                          Tensor::randn({5, 3}, rng)) < 1e-6);
    CHECK(fd_check_single([](const Var& x) { return ad::mean_rows(x); }, Tensor::randn({5, 3}, rng)) <
          1e-6);
    CHECK(fd_check_single(
              [](const Var& x) { return ad::concat_cols(ad::slice_cols(x, 0, 2), x); },
              Tensor::randn({4, 4}, rng)) < 1e-6);
}

TEST_CASE("matmul, layer norm, attention gradients") {
    Rng rng(13);
    nn::ParameterStore store;
    Var a = store.add("a", Tensor::randn({3, 4}, rng));
    Var b = store.add("b", Tensor::randn({4, 5}, rng));
    Var gamma = store.add("gamma", Tensor::full({1, 5}, 1.1));
    Var beta = store.add("beta", Tensor::randn({1, 5}, rng, 0.1));
    Var q = store.add("q", Tensor::randn({3, 6}, rng));
    Var kv = store.add("kv", Tensor::randn({4, 6}, rng));

    auto make_loss = [&] {
        Var h = ad::layer_norm(ad::matmul(a, b), gamma, beta);
        Var att = ad::attention(q, kv, kv, 2);
        return ad::add(ad::mean_sq_rows(h), ad::mean_sq_rows(att));
    };
    auto result = test::grad_check(store, make_loss);
    CHECK_MESSAGE(result.max_rel_err < 1e-6, result.worst_param);
}

TEST_CASE("conv1d matches finite differences and length arithmetic") {
    Rng rng(17);
    nn::ParameterStore store;
    nn::Conv1d conv(store, "conv", 3, 4, 4, 2, 1, rng);
    Var x = store.add("x", Tensor::randn({8, 3}, rng));
    auto make_loss = [&] { return ad::mean_sq_rows(conv.forward(x)); };
    CHECK(test::grad_check(store, make_loss).max_rel_err < 1e-6);
    CHECK(conv.forward(x)->value.dim(0) == 4);  // (8 + 2 - 4)/2 + 1
}

TEST_CASE("attention rows are stochastic") {
    Rng rng(19);
    Tensor probs;
    Var q = ad::constant(Tensor::randn({8, 8}, rng));
    Var kv = ad::constant(Tensor::randn({8, 8}, rng));
    ad::attention(q, kv, kv, 2, &probs);
    REQUIRE(probs.dim(0) == 16);  // heads * T_q
    for (std::int64_t i = 0; i < probs.dim(0); ++i) {
        double row_sum = 0.0;
        for (std::int64_t j = 0; j < probs.dim(1); ++j) row_sum += probs.at(i, j);
        CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("adam reduces a quadratic") {
    nn::ParameterStore store;
    Rng rng(23);
    Var w = store.add("w", Tensor::randn({1, 8}, rng));
    nn::Adam opt(store, {0.05});
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 200; ++step) {
        store.zero_grad();
        Var loss = ad::mean_all(ad::mul(w, w));
        if (step == 0) first = loss->value[0];
        last = loss->value[0];
        ad::backward(loss);
        opt.step();
    }
    CHECK(last < 0.01 * first);
}

TEST_CASE("no-grad guard suppresses graph construction") {
    nn::ParameterStore store;
    Var w = store.add("w", Tensor::full({1, 2}, 2.0));
    ad::NoGradGuard ng;
    Var y = ad::mean_all(ad::mul(w, w));
    CHECK_FALSE(y->requires_grad);
}

TEST_CASE("checkpoint round-trips parameters at f32 precision") {
    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() / "dyadit_ckpt_test").string();
    fs::remove_all(dir);

    nn::ParameterStore store;
    Rng rng(29);
    store.add("layer.weight", Tensor::randn({3, 4}, rng));
    store.add("layer.bias", Tensor::randn({1, 4}, rng));
    // Force exact f32 values so the round trip is bit-exact.
    for (auto& [_, v] : store.items())
        for (std::int64_t i = 0; i < v->value.size(); ++i)
            v->value[i] = static_cast<double>(static_cast<float>(v->value[i]));

    save_checkpoint(dir, "tokenizer", nlohmann::json{{"x", 1}}, store);

    nn::ParameterStore loaded;
    Rng rng2(31);
    loaded.add("layer.weight", Tensor::randn({3, 4}, rng2));
    loaded.add("layer.bias", Tensor::randn({1, 4}, rng2));
    load_checkpoint_params(dir, loaded);
    for (std::size_t p = 0; p < store.items().size(); ++p) {
        const Tensor& a = store.items()[p].second->value;
        const Tensor& b = loaded.items()[p].second->value;
        for (std::int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    }

    CHECK_THROWS_AS(read_checkpoint_meta(dir, "dit"), FormatError);
    CHECK_THROWS_AS(read_checkpoint_meta(dir + "_missing", "tokenizer"), IoError);

    // Truncated tensor file is a FormatError naming the file.
    {
        std::ofstream trunc(fs::path(dir) / "layer.weight.f32", std::ios::binary | std::ios::trunc);
        trunc << "xy";
    }
    try {
        load_checkpoint_params(dir, loaded);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("layer.weight.f32") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_SUITE_END();
