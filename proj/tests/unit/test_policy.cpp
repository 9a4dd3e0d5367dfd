#include <doctest.h>

#include <cmath>
#include <random>

#include "drouter/error.hpp"
#include "drouter/policy.hpp"
#include "support.hpp"

using namespace drouter;
using doctest::Approx;

namespace {
ExpertMask mask_of(std::vector<std::uint8_t> bits) { return ExpertMask(std::move(bits)); }
}  // namespace

TEST_CASE("gate at zero logit and zero noise is soft 0.5, hard 1") {
    const std::vector<double> gamma{0.0}, noise{0.0};
    const auto g = gumbel_sigmoid_gate(gamma, ExpertMask::all(1), 1.0, noise);
    CHECK(g.soft[0] == 0.5);
    CHECK(g.hard[0] == 1.0);
    CHECK(g.st[0] == 1.0);
}

TEST_CASE("masked gates are exactly zero whatever the logit and noise") {
    const std::vector<double> gamma{25.0, -3.0, 100.0}, noise{5.0, 5.0, 5.0};
    const auto g = gumbel_sigmoid_gate(gamma, mask_of({0, 1, 0}), 0.3, noise);
    CHECK(g.hard[0] == 0.0);
    CHECK(g.soft[0] == 0.0);
    CHECK(g.hard[2] == 0.0);
    CHECK(g.soft[2] == 0.0);
    CHECK(g.hard[1] == 1.0);
    const auto d = gate_soft_gradient(g, gamma, mask_of({0, 1, 0}), 0.3);
    CHECK(d[0] == 0.0);
    CHECK(d[2] == 0.0);
}

TEST_CASE("gate soft value and derivative at gamma 2, noise -0.5, tau 0.5") {
    const std::vector<double> gamma{2.0}, noise{-0.5};
    const auto g = gumbel_sigmoid_gate(gamma, ExpertMask::all(1), 0.5, noise);
    const double s = testkit::sigmoid(3.0);
    CHECK(g.soft[0] == Approx(s).epsilon(1e-12));
    CHECK(g.soft[0] == Approx(0.952574).epsilon(1e-6));
    const double analytic = gate_soft_gradient(g, gamma, ExpertMask::all(1), 0.5)[0];
    CHECK(analytic == Approx(0.090353).epsilon(1e-5));
    const double h = 1e-5;
    const std::vector<double> gp{2.0 + h}, gm{2.0 - h};
    const double fd = (gumbel_sigmoid_gate(gp, ExpertMask::all(1), 0.5, noise).soft[0] -
                       gumbel_sigmoid_gate(gm, ExpertMask::all(1), 0.5, noise).soft[0]) /
                      (2 * h);
    CHECK(std::abs(analytic - fd) / std::abs(fd) < 1e-4);
}

TEST_CASE("gate derivative matches finite differences for random feasible logits") {
    std::mt19937_64 gen(11);
    std::normal_distribution<double> n(0.0, 2.0);
    for (int trial = 0; trial < 200; ++trial) {
        const double gamma0 = n(gen), eta = n(gen), tau = 0.2 + std::abs(n(gen));
        const std::vector<double> noise{eta};
        const std::vector<double> g0{gamma0}, gp{gamma0 + 1e-5}, gm{gamma0 - 1e-5};
        const auto g = gumbel_sigmoid_gate(g0, ExpertMask::all(1), tau, noise);
        const double a = gate_soft_gradient(g, g0, ExpertMask::all(1), tau)[0];
        const double fd = (gumbel_sigmoid_gate(gp, ExpertMask::all(1), tau, noise).soft[0] -
                           gumbel_sigmoid_gate(gm, ExpertMask::all(1), tau, noise).soft[0]) /
                          2e-5;
        if (std::abs(fd) > 1e-8) CHECK(std::abs(a - fd) / std::abs(fd) < 1e-4);
    }
}

TEST_CASE("gate noise comes from the stream and is reproducible") {
    const std::vector<double> gamma{0.1, -0.2, 0.3};
    CounterRng a(5, StreamDomain::gate_noise, 1, 2), b(5, StreamDomain::gate_noise, 1, 2);
    const auto ga = gumbel_sigmoid_gate(gamma, ExpertMask::all(3), 1.0, a);
    const auto gb = gumbel_sigmoid_gate(gamma, ExpertMask::all(3), 1.0, b);
    CHECK(ga.noise == gb.noise);
    CHECK(ga.soft == gb.soft);
}

TEST_CASE("support repair") {
    CHECK(repair_support(std::vector<double>{1, 0, 1}, ExpertMask::all(3)) == std::vector<double>{1, 0, 1});
    CHECK(repair_support(std::vector<double>{0, 0, 0}, mask_of({1, 0, 1})) == std::vector<double>{1, 0, 1});
    CHECK(repair_support(std::vector<double>{0, 0, 0}, mask_of({0, 0, 0})) == std::vector<double>{0, 0, 0});
}

TEST_CASE("masked allocation examples") {
    auto a = masked_allocation(std::vector<double>{1, 1, 1}, mask_of({1, 1, 0}), 1.0).probs;
    CHECK(a[0] == Approx(0.5));
    CHECK(a[1] == Approx(0.5));
    CHECK(a[2] == 0.0);
    a = masked_allocation(std::vector<double>{0, std::log(2.0), 0}, ExpertMask::all(3), 1.0).probs;
    CHECK(a[0] == Approx(0.25).epsilon(1e-12));
    CHECK(a[1] == Approx(0.5).epsilon(1e-12));
    CHECK(a[2] == Approx(0.25).epsilon(1e-12));
    a = masked_allocation(std::vector<double>{5, 5, 5}, mask_of({0, 0, 1}), 2.0).probs;
    CHECK(a == std::vector<double>{0, 0, 1});
    CHECK_THROWS_AS(masked_allocation(std::vector<double>{0, 0}, mask_of({0, 0}), 1.0), EmptyFeasibleSetError);
}

TEST_CASE("conditional allocation examples") {
    const AllocationDist a{{0.5, 0.3, 0.2}};
    auto q = conditional_allocation(a, std::vector<double>{1, 0, 1});
    CHECK(q[0] == Approx(0.5 / 0.7).epsilon(1e-12));
    CHECK(q[0] == Approx(0.714286).epsilon(1e-6));
    CHECK(q[1] == 0.0);
    CHECK(q[2] == Approx(0.285714).epsilon(1e-6));
    q = conditional_allocation(a, std::vector<double>{1, 1, 1});
    for (int j = 0; j < 3; ++j) CHECK(q[j] == Approx(a.probs[j]).epsilon(1e-15));
    q = conditional_allocation(a, std::vector<double>{0, 1, 0});
    CHECK(q == std::vector<double>{0, 1, 0});
    CHECK_THROWS_AS(conditional_allocation(AllocationDist{{1.0, 0.0}}, std::vector<double>{0, 1}),
                    DegenerateSupportError);
}

TEST_CASE("policy assembly") {
    std::vector<double> q(12, 0.0);
    q[2] = 1.0;
    auto p = assemble_policy(0.0, q, ExpertMask::all(12));
    CHECK(p.action_probs[0] == 0.5);
    CHECK(p.action_probs[3] == 0.5);
    CHECK(p.action_probs[1] == 0.0);

    std::vector<double> q2{0.5, 0.5, 0.0};
    p = assemble_policy(1e6, q2, mask_of({1, 1, 0}));
    CHECK(p.defer_mass == Approx(testkit::sigmoid(30.0)).epsilon(1e-15));
    CHECK(p.action_probs[0] < 1e-12);
    CHECK(p.action_probs[1] == Approx(0.5).epsilon(1e-12));
    CHECK(p.action_probs[3] == 0.0);
    double sum = 0.0;
    for (double x : p.action_probs) sum += x;
    CHECK(sum == Approx(1.0).epsilon(1e-12));

    p = assemble_policy(5.0, std::vector<double>{0, 0, 0}, mask_of({0, 0, 0}));
    CHECK(p.defer_mass == 0.0);
    CHECK(p.action_probs == std::vector<double>{1, 0, 0, 0});
}

TEST_CASE("masked simplex projection") {
    auto v = project_masked_simplex(std::vector<double>{0.2, 0.3, 0.5}, std::vector<double>{1, 1, 0});
    CHECK(v[0] == Approx(0.4));
    CHECK(v[1] == Approx(0.6));
    CHECK(v[2] == 0.0);
    const std::vector<double> fixed{0.25, 0.25, 0.5};
    CHECK(project_masked_simplex(fixed, std::vector<double>{1, 1, 1}) == fixed);
    CHECK(project_masked_simplex(std::vector<double>{1, 0, 0}, std::vector<double>{1, 1, 1}) ==
          std::vector<double>{1, 0, 0});
}

TEST_CASE("hard action tie rule") {
    auto make = [](std::vector<double> pi) {
        RoutingPolicy p;
        p.action_probs = std::move(pi);
        p.defer_mass = 1.0 - p.action_probs[0];
        return p;
    };
    const auto m = ExpertMask::all(2);
    CHECK(hard_action(make({0.6, 0.3, 0.1}), m) == 0);
    CHECK(hard_action(make({0.5, 0.5, 0.0}), m) == 0);
    CHECK(hard_action(make({0.2, 0.3, 0.5}), m) == 2);
    CHECK(hard_action(make({0.2, 0.4, 0.4}), m) == 1);
    // An infeasible expert is never chosen even if it carries mass.
    CHECK(hard_action(make({0.2, 0.1, 0.7}), mask_of({1, 0})) == 0);
}

TEST_CASE("expert mask bookkeeping") {
    const auto m = mask_of({1, 0, 1, 1});
    CHECK(m.count() == 3);
    CHECK(m.action_mask() == std::vector<double>{1, 1, 0, 1, 1});
    CHECK_THROWS_AS(mask_of({2}), ContractError);
}
