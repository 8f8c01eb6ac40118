#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "vqsad/scheduler.hpp"

using namespace vqsad;
using ad::Tensor;

namespace {

double sigma(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<double> random_simplex(int k, Rng& rng) {
    std::vector<double> w(static_cast<std::size_t>(k));
    double s = 0.0;
    for (double& x : w) {
        x = 0.05 + rng.uniform();
        s += x;
    }
    for (double& x : w) x /= s;
    return w;
}

}  // namespace

TEST_CASE("alpha_bar endpoints and a hand-evaluated interior point") {
    std::vector<double> w{0.2, 0.3, 0.5};
    SUBCASE("t = 0 gives sigma(-zeta_min)") {
        AlphaBar a = alpha_bar(w, 0.0, -10.0, 10.0);
        CHECK(a.value == doctest::Approx(sigma(10.0)).epsilon(1e-12));
        CHECK(a.value == doctest::Approx(0.9999546).epsilon(1e-6));
    }
    SUBCASE("t = 1 gives sigma(-zeta_max)") {
        AlphaBar a = alpha_bar(w, 1.0, -10.0, 10.0);
        CHECK(a.value == doctest::Approx(sigma(-10.0)).epsilon(1e-12));
        CHECK(a.value == doctest::Approx(4.5398e-5).epsilon(1e-3));
    }
    SUBCASE("t = 0.5 direct formula evaluation") {
        // zeta_hat = 0.2*0.5 + 0.3*0.25 + 0.5*0.125 = 0.2375
        AlphaBar a = alpha_bar(w, 0.5, -10.0, 10.0);
        double zeta = 0.2375 * 20.0 - 10.0;
        CHECK(zeta == doctest::Approx(-5.25));
        CHECK(a.value == doctest::Approx(sigma(5.25)).epsilon(1e-12));
        CHECK(a.value == doctest::Approx(0.99478).epsilon(1e-4));
    }
    SUBCASE("out of range t is rejected") {
        CHECK_THROWS_AS(alpha_bar(w, -0.1, -10, 10), DomainError);
        CHECK_THROWS_AS(alpha_bar(w, 1.1, -10, 10), DomainError);
    }
}

TEST_CASE("alpha_bar monotone and derivative matches central differences") {
    Rng rng(53);
    for (int net = 0; net < 100; ++net) {
        auto w = random_simplex(2 + rng.uniform_int(7), rng);
        double prev = 2.0;
        for (int gi = 0; gi <= 100; ++gi) {
            double t = gi / 100.0;
            AlphaBar a = alpha_bar(w, t, -10.0, 10.0);
            CHECK(a.value < prev + 1e-15);
            prev = a.value;
            if (t > 0.02 && t < 0.98) {
                double fd = testutil::central_difference(
                    [&](double x) { return alpha_bar(w, x, -10.0, 10.0).value; }, t, 1e-5);
                CHECK(testutil::relative_error(a.deriv, fd) <= 1e-5);
            }
        }
    }
}

TEST_CASE("transition matrix construction") {
    SUBCASE("identity on non-mask states") {
        TransitionMatrix q = build_transition(1.0, 0.0, 0.0, 4);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 5; ++j) CHECK(q.q.at(i, j) == (i == j ? 1.0 : 0.0));
    }
    SUBCASE("total masking") {
        TransitionMatrix q = build_transition(0.0, 1.0, 0.0, 3);
        for (int i = 0; i < 3; ++i) CHECK(q.q.at(i, 3) == 1.0);
    }
    SUBCASE("hand-checked mask-and-replace row") {
        TransitionMatrix q = build_transition(0.7, 0.1, 0.1, 3);
        std::vector<double> p{0.0, 1.0, 0.0, 0.0};
        auto out = q.apply(p);
        CHECK(out[0] == doctest::Approx(0.1));
        CHECK(out[1] == doctest::Approx(0.7));
        CHECK(out[2] == doctest::Approx(0.1));
        CHECK(out[3] == doctest::Approx(0.1));
    }
    SUBCASE("mask row is absorbing") {
        TransitionMatrix q = build_transition(0.5, 0.3, 0.1, 3);
        CHECK(q.q.at(3, 3) == 1.0);
        for (int j = 0; j < 3; ++j) CHECK(q.q.at(3, j) == 0.0);
    }
    SUBCASE("row-sum violation is rejected with the deficit") {
        CHECK_THROWS_WITH_AS(build_transition(0.8, 0.1, 0.2, 3), doctest::Contains("row sum"), DomainError);
    }
}

TEST_CASE("cumulative coefficients") {
    SUBCASE("single step matches the definitions") {
        Cumulative c = cumulate(std::vector<double>{0.9}, std::vector<double>{0.05});
        CHECK(c.alpha_bar[0] == doctest::Approx(0.9));
        CHECK(c.beta_bar[0] == doctest::Approx(0.05));
        CHECK(c.gamma_bar[0] == doctest::Approx(0.05));
    }
    SUBCASE("two steps, product formulas") {
        Cumulative c = cumulate(std::vector<double>{0.9, 0.8}, std::vector<double>{0.05, 0.1});
        CHECK(c.alpha_bar[1] == doctest::Approx(0.72));
        CHECK(c.beta_bar[1] == doctest::Approx(0.145));
        CHECK(c.gamma_bar[1] == doctest::Approx(0.135));
    }
    SUBCASE("identity holds to 1e-12 for random schedules") {
        Rng rng(59);
        for (int trial = 0; trial < 50; ++trial) {
            int T = 1 + rng.uniform_int(10);
            std::vector<double> a, b;
            for (int i = 0; i < T; ++i) {
                double bi = 0.12 * rng.uniform();
                b.push_back(bi);
                a.push_back((1.0 - bi) * (0.9 + 0.1 * rng.uniform()));  // keeps gamma_bar >= 0
            }
            Cumulative c = cumulate(a, b);
            for (int i = 0; i < T; ++i)
                CHECK(std::fabs(c.alpha_bar[static_cast<std::size_t>(i)] + c.beta_bar[static_cast<std::size_t>(i)] +
                                c.gamma_bar[static_cast<std::size_t>(i)] - 1.0) <= 1e-12);
        }
    }
    SUBCASE("inconsistent schedule is rejected") {
        // alpha larger than the mask survival forces gamma_bar < 0.
        CHECK_THROWS_AS(cumulate(std::vector<double>{0.99}, std::vector<double>{0.5}), DomainError);
    }
}

TEST_CASE("per-step matrices reproduce the cumulative expansion") {
    Rng rng(61);
    for (int k_classes = 2; k_classes <= 5; ++k_classes)
        for (int T = 1; T <= 10; ++T) {
            std::vector<double> a, b;
            for (int i = 0; i < T; ++i) {
                double bi = 0.08 * rng.uniform();
                b.push_back(bi);
                a.push_back((1.0 - bi) * (0.92 + 0.08 * rng.uniform()));
            }
            Cumulative c = cumulate(a, b);
            for (int x0 = 0; x0 < k_classes; ++x0) {
                std::vector<double> p(static_cast<std::size_t>(k_classes) + 1, 0.0);
                p[static_cast<std::size_t>(x0)] = 1.0;
                double ap = 1.0, bp = 0.0, gp = 0.0;
                for (int step = 0; step < T; ++step) {
                    StepParams sp = per_step_params(ap, bp, gp, c.alpha_bar[static_cast<std::size_t>(step)],
                                                    c.beta_bar[static_cast<std::size_t>(step)], k_classes);
                    REQUIRE(sp.valid);
                    TransitionMatrix q = build_transition(sp.alpha, sp.beta, sp.gamma, k_classes);
                    p = q.apply(p);
                    ap = c.alpha_bar[static_cast<std::size_t>(step)];
                    bp = c.beta_bar[static_cast<std::size_t>(step)];
                    gp = c.gamma_bar[static_cast<std::size_t>(step)];
                    auto want = cumulative_marginal(ap, bp, gp, x0, k_classes);
                    for (int j = 0; j <= k_classes; ++j)
                        CHECK(std::fabs(p[static_cast<std::size_t>(j)] - want[static_cast<std::size_t>(j)]) <= 1e-9);
                }
            }
        }
}

TEST_CASE("per-step parameters reduce to the alpha ratio when gamma is zero") {
    StepParams sp = per_step_params(0.9, 0.1, 0.0, 0.72, 0.28, 4);
    CHECK(sp.valid);
    CHECK(sp.alpha == doctest::Approx(0.8));
    CHECK(sp.gamma == doctest::Approx(0.0).epsilon(1e-12));
}

namespace {

struct NetFixture {
    ParamStore store;
    SchedulerNet net;
    GraphBatch batch;

    explicit NetFixture(bool learn_gamma, std::uint64_t seed = 71) {
        Rng rng(seed);
        SchedulerConfig cfg;
        cfg.learn_gamma = learn_gamma;
        net = SchedulerNet(store, cfg, 5, 4, 8, rng);
        NoisyGraph g(4, 5, 4, 0, 0);
        g.atom_types = {0, 1, 2, 5};  // includes a masked node
        g.set_bond(0, 1, 1);
        g.set_bond(1, 2, 2);
        std::vector<const NoisyGraph*> ptrs{&g};
        std::vector<RrwpTensor> encs{rrwp(g, 8)};
        batch = make_batch(ptrs, {0.4}, encs, [](int c) { return c != 0 && c != 4; });
    }
};

}  // namespace

TEST_CASE("scheduler net outputs live on the simplex") {
    NetFixture f(false);
    Tensor w = f.net.node_weights(f.batch, nullptr);
    CHECK(w.value().rows() == 4);
    CHECK(w.value().cols() == 6);
    for (long r = 0; r < 4; ++r) {
        double s = 0.0;
        for (long c = 0; c < 6; ++c) {
            CHECK(w.value().at(r, c) >= 0.0);
            s += w.value().at(r, c);
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
    Tensor we = f.net.edge_weights(f.batch, nullptr);
    CHECK(we.value().rows() == 6);
    // Absent condition means a zero condition vector: output is deterministic.
    Tensor w2 = f.net.node_weights(f.batch, nullptr);
    for (long i = 0; i < w.value().size(); ++i) CHECK(w.value()[i] == w2.value()[i]);
}

TEST_CASE("schedule tensors match the closed form and sum to one") {
    NetFixture f(true);
    ScheduleTensors s = f.net.node_schedules(f.batch, nullptr);
    Tensor w = f.net.node_weights(f.batch, nullptr);
    for (long r = 0; r < 4; ++r) {
        std::vector<double> row;
        for (long c = 0; c < w.value().cols(); ++c) row.push_back(w.value().at(r, c));
        AlphaBar ref = alpha_bar(row, 0.4, -10.0, 10.0);
        CHECK(s.alpha_bar.value().at(r, 0) == doctest::Approx(ref.value).epsilon(1e-12));
        CHECK(s.alpha_dot.value().at(r, 0) == doctest::Approx(ref.deriv).epsilon(1e-12));
        double total = s.alpha_bar.value().at(r, 0) + s.beta_bar.value().at(r, 0) + s.gamma_bar.value().at(r, 0);
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(s.gamma_bar.value().at(r, 0) >= 0.0);
    }
}

TEST_CASE("gamma head vanishes at t = 1 so the chain starts fully masked") {
    NetFixture f(true);
    std::vector<double> ones(4, 1.0);
    Tensor w = f.net.node_weights(f.batch, nullptr);
    Tensor g = f.net.node_gamma_logit(f.batch, nullptr);
    ScheduleTensors s = f.net.schedules_at(w, &g, ones);
    for (long r = 0; r < 4; ++r) {
        CHECK(s.gamma_bar.value().at(r, 0) == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(s.beta_bar.value().at(r, 0) == doctest::Approx(1.0 - s.alpha_bar.value().at(r, 0)).epsilon(1e-12));
    }
}
