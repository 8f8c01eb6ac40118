#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "test_util.hpp"
#include "vqsad/autodiff.hpp"
#include "vqsad/param_store.hpp"

using namespace vqsad;
using namespace vqsad::ad;

TEST_CASE("forward op values") {
    Tensor x = Tensor::constant(Array::scalar(0.0));
    CHECK(sigmoid(x).value().scalar_value() == doctest::Approx(0.5));

    Tensor v = Tensor::constant(Array::from(1, 4, {3.0, 3.0, 3.0, 3.0}));
    Tensor s = softmax_rows(v);
    for (long c = 0; c < 4; ++c) CHECK(s.value().at(0, c) == doctest::Approx(0.25));

    Tensor a = Tensor::constant(Array::from(1, 3, {1.0, -2.0, 0.5}));
    Tensor b = neg(a);
    CHECK(cosine_rows(a, b).value().scalar_value() == doctest::Approx(-1.0).epsilon(1e-9));

    CHECK(softplus(Tensor::constant(Array::scalar(0.0))).value().scalar_value() ==
          doctest::Approx(std::log(2.0)));
    CHECK(relu(Tensor::constant(Array::scalar(-3.0))).value().scalar_value() == 0.0);
}

TEST_CASE("shape mismatch raises at construction") {
    Tensor a = Tensor::constant(Array::zeros(2, 3));
    Tensor b = Tensor::constant(Array::zeros(3, 3));
    CHECK_THROWS_AS(add(a, b), ShapeError);
    CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("backward on hand-checked cases") {
    SUBCASE("sum of squares") {
        Tensor w = Tensor::leaf(Array::from(1, 3, {1.0, 2.0, 3.0}));
        Tensor loss = sum_all(mul(w, w));
        backward(loss);
        CHECK(w.grad().at(0, 0) == doctest::Approx(2.0));
        CHECK(w.grad().at(0, 1) == doctest::Approx(4.0));
        CHECK(w.grad().at(0, 2) == doctest::Approx(6.0));
    }
    SUBCASE("sigmoid at zero") {
        Tensor w = Tensor::leaf(Array::scalar(0.0));
        backward(sigmoid(w));
        CHECK(w.grad()[0] == doctest::Approx(0.25));
    }
    SUBCASE("non-scalar loss rejected") {
        Tensor w = Tensor::leaf(Array::zeros(2, 2));
        CHECK_THROWS_AS(backward(w), DomainError);
    }
}

namespace {

// Random 3-layer network built from the public ops; returns scalar loss.
Tensor random_network(const std::vector<Tensor>& params, const Array& input) {
    Tensor x = Tensor::constant(input);
    Tensor h1 = relu(add(matmul(x, params[0]), params[1]));
    Tensor h2 = sigmoid(add(matmul(h1, params[2]), params[3]));
    Tensor h3 = softmax_rows(add(matmul(h2, params[4]), params[5]));
    Tensor mixed = mul(h3, exp(scale(h3, 0.3)));
    return mean_all(ad::log(add_scalar(mixed, 1.0)));
}

}  // namespace

TEST_CASE("gradient check: 20 random 3-layer networks vs central differences") {
    Rng rng(42);
    int checked = 0;
    for (int trial = 0; trial < 20; ++trial) {
        long din = 2 + rng.uniform_int(3), dh = 2 + rng.uniform_int(4), dout = 2 + rng.uniform_int(3);
        std::vector<Tensor> params{
            Tensor::leaf(Array::uniform(din, dh, -0.8, 0.8, rng)),
            Tensor::leaf(Array::uniform(1, dh, -0.5, 0.5, rng)),
            Tensor::leaf(Array::uniform(dh, dh, -0.8, 0.8, rng)),
            Tensor::leaf(Array::uniform(1, dh, -0.5, 0.5, rng)),
            Tensor::leaf(Array::uniform(dh, dout, -0.8, 0.8, rng)),
            Tensor::leaf(Array::uniform(1, dout, -0.5, 0.5, rng)),
        };
        Array input = Array::uniform(3, din, -1.0, 1.0, rng);
        backward(random_network(params, input));
        for (const Tensor& p : params) {
            Array& value = p.node()->value;
            for (long i = 0; i < std::min<long>(value.size(), 4); ++i) {
                double saved = value[i];
                auto eval = [&](double v) {
                    value[i] = v;
                    NoGradGuard ng;
                    double out = random_network(params, input).value().scalar_value();
                    value[i] = saved;
                    return out;
                };
                auto fd = testutil::robust_difference(eval, saved);
                if (!fd.reliable) continue;  // relu kink under the step
                if (std::fabs(fd.value) < 1e-7 && std::fabs(p.grad()[i]) < 1e-7) continue;
                CHECK(testutil::relative_error(p.grad()[i], fd.value) <= 1e-4);
                ++checked;
            }
        }
    }
    CHECK(checked > 100);
}

TEST_CASE("stop_gradient: identity values, no gradient flow") {
    Tensor w = Tensor::leaf(Array::from(1, 2, {0.7, -0.3}));
    Tensor blocked = stop_gradient(mul(w, w));
    for (long i = 0; i < 2; ++i)
        CHECK(blocked.value()[i] == doctest::Approx(w.value()[i] * w.value()[i]));
    Tensor loss = sum_all(add(blocked, w));
    backward(loss);
    CHECK(w.grad()[0] == doctest::Approx(1.0));  // only the direct path
    CHECK(w.grad()[1] == doctest::Approx(1.0));
}

TEST_CASE("gumbel softmax") {
    Rng rng(7);
    Array logits = Array::from(1, 4, {0.5, -1.0, 2.0, 0.0});

    SUBCASE("simplex for every draw") {
        for (int i = 0; i < 50; ++i) {
            Tensor y = gumbel_softmax(Tensor::constant(logits), 0.7, rng, false);
            double s = 0.0;
            for (long c = 0; c < 4; ++c) {
                CHECK(y.value().at(0, c) >= 0.0);
                s += y.value().at(0, c);
            }
            CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
    SUBCASE("temperature to zero pins the perturbed argmax") {
        // Same noise draw at two temperatures: replay the rng.
        Rng r1(99), r2(99);
        Tensor soft = gumbel_softmax(Tensor::constant(logits), 1e-6, r1, false);
        Tensor hard = gumbel_softmax(Tensor::constant(logits), 1.0, r2, true);
        long argmax_soft = 0, argmax_hard = 0;
        for (long c = 1; c < 4; ++c) {
            if (soft.value().at(0, c) > soft.value().at(0, argmax_soft)) argmax_soft = c;
            if (hard.value().at(0, c) > hard.value().at(0, argmax_hard)) argmax_hard = c;
        }
        CHECK(argmax_soft == argmax_hard);
        CHECK(soft.value().at(0, argmax_soft) == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(hard.value().at(0, argmax_hard) == 1.0);
    }
    SUBCASE("hard-variant frequencies match softmax(logits) within 3 sigma") {
        const int draws = 100000;
        std::vector<int> counts(4, 0);
        for (int i = 0; i < draws; ++i) {
            Tensor y = gumbel_softmax(Tensor::constant(logits), 1.0, rng, true);
            for (long c = 0; c < 4; ++c)
                if (y.value().at(0, c) == 1.0) ++counts[static_cast<std::size_t>(c)];
        }
        Array probs = softmax_rows(Tensor::constant(logits)).value();
        for (long c = 0; c < 4; ++c) {
            double p = probs.at(0, c);
            double se = std::sqrt(p * (1.0 - p) / draws);
            CHECK(std::fabs(counts[static_cast<std::size_t>(c)] / static_cast<double>(draws) - p) <= 3.0 * se);
        }
    }
    SUBCASE("non-finite logits rejected") {
        Array bad = Array::from(1, 2, {std::numeric_limits<double>::infinity(), 0.0});
        CHECK_THROWS_AS(gumbel_softmax(Tensor::constant(bad), 1.0, rng, false), DomainError);
    }
    SUBCASE("straight-through gradient passes to the relaxed sample") {
        Tensor w = Tensor::leaf(Array::from(1, 3, {0.2, 0.1, -0.4}));
        Tensor y = gumbel_softmax(w, 1.0, rng, true);
        backward(sum_all(mul(y, Tensor::constant(Array::from(1, 3, {1.0, 2.0, 3.0})))));
        double gnorm = 0.0;
        for (long i = 0; i < 3; ++i) gnorm += std::fabs(w.grad()[i]);
        CHECK(gnorm > 0.0);
    }
}

TEST_CASE("adam") {
    SUBCASE("zero gradients leave parameters unchanged") {
        ParamStore store;
        Rng rng(1);
        store.add("w", Array::from(1, 2, {1.5, -2.5}));
        backward(scale(sum_all(store.at("w")), 0.0));
        store.adam_step({});
        CHECK(store.at("w").value()[0] == doctest::Approx(1.5));
        CHECK(store.at("w").value()[1] == doctest::Approx(-2.5));
    }
    SUBCASE("bias-corrected first step moves by about lr") {
        ParamStore store;
        store.add("w", Array::scalar(1.0));
        backward(sum_all(store.at("w")));  // gradient 1
        AdamConfig cfg;
        cfg.lr = 0.1;
        store.adam_step(cfg);
        // m_hat = 1, v_hat = 1 after correction, so the step is lr/(1+eps).
        CHECK(store.at("w").value()[0] == doctest::Approx(0.9).epsilon(1e-7));
    }
    SUBCASE("gradients are zeroed after the step") {
        ParamStore store;
        store.add("w", Array::scalar(2.0));
        backward(sum_all(mul(store.at("w"), store.at("w"))));
        store.adam_step({});
        CHECK(store.at("w").grad()[0] == 0.0);
    }
    SUBCASE("quadratic bowl converges within 1e-3 after 500 steps") {
        ParamStore store;
        store.add("w", Array::scalar(0.0));
        AdamConfig cfg;
        cfg.lr = 0.05;
        for (int i = 0; i < 500; ++i) {
            Tensor d = add_scalar(store.at("w"), -3.0);
            backward(sum_all(mul(d, d)));
            store.adam_step(cfg);
        }
        CHECK(std::fabs(store.at("w").value()[0] - 3.0) <= 1e-3);
    }
    SUBCASE("sgd fallback") {
        ParamStore store;
        store.add("w", Array::scalar(1.0));
        backward(sum_all(mul(store.at("w"), store.at("w"))));
        store.sgd_step(0.25);
        CHECK(store.at("w").value()[0] == doctest::Approx(0.5));
    }
}

TEST_CASE("checkpoint round trip validates shapes") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "vqsad_ckpt_test";
    fs::remove_all(dir);
    Rng rng(3);
    ParamStore store;
    store.add("a", Array::uniform(3, 4, -1, 1, rng));
    store.add("b", Array::uniform(1, 5, -1, 1, rng));
    std::uint64_t sum_before = store.checksum();
    store.save(dir.string());

    ParamStore loaded;
    loaded.add("a", Array::zeros(3, 4));
    loaded.add("b", Array::zeros(1, 5));
    loaded.load(dir.string());
    CHECK(loaded.checksum() == sum_before);

    ParamStore wrong;
    wrong.add("a", Array::zeros(3, 4));
    wrong.add("b", Array::zeros(2, 5));
    CHECK_THROWS_AS(wrong.load(dir.string()), DomainError);
    fs::remove_all(dir);
}

TEST_CASE("trainable flags freeze parameters") {
    ParamStore store;
    store.add("vq.codes", Array::scalar(1.0));
    store.set_trainable_prefix("vq.", false);
    backward(sum_all(mul(store.at("vq.codes"), store.at("vq.codes"))));
    store.adam_step({});
    CHECK(store.at("vq.codes").value()[0] == doctest::Approx(1.0));
    CHECK(store.all_frozen("vq."));
}
