#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "mlap/bubbles.hpp"

using namespace mlap;

namespace {

ModelParams planar() {
    ModelParams mp;
    mp.N = 2;
    mp.p = 1.25;
    mp.q = 1.2;
    mp.s = 0.5;
    mp.eps = 0.5;
    return mp;
}

// best constant of ‖∇u‖_p^p >= S ‖u‖_{p*}^p in R^N (Talenti's closed form)
double talenti_constant(double N, double p) {
    const double lg = std::lgamma(1.0 + N / 2.0) + std::lgamma(N) - std::lgamma(N / p) - std::lgamma(1.0 + N - N / p);
    const double logC = -0.5 * std::log(std::numbers::pi) - std::log(N) / p + (1.0 - 1.0 / p) * std::log((p - 1.0) / (N - p)) +
                        lg / N;
    return std::exp(-p * logC);
}

std::vector<double> eps_ladder(double alpha) {
    std::vector<double> e;
    for (double d : {0.2, 0.15, 0.11, 0.08}) e.push_back(std::pow(d, 1.0 / alpha));
    return e;
}

BubbleParams unit_bubble(const ModelParams& mp) {
    BubbleParams bp;
    bp.alpha = default_alpha(mp);
    bp.cutoff_inner = 1.0;
    return bp;
}

}  // namespace

TEST(TalentiOracle, KnownThreeDimensionalValue) {
    // S = 3 (π/2)^{4/3} for N = 3, p = 2
    EXPECT_NEAR(talenti_constant(3.0, 2.0), 3.0 * std::pow(std::numbers::pi / 2.0, 4.0 / 3.0), 1e-12);
}

TEST(Profile, CentreValue) {
    const ModelParams mp = planar();
    BubbleParams bp = unit_bubble(mp);
    bp.eps_b = 1e-3;
    bp.K = 2.5;
    const double d = bubble_width(bp);
    EXPECT_DOUBLE_EQ(bubble_width(bp), std::pow(1e-3, bp.alpha));
    EXPECT_NEAR(bubble_profile(0.0, bp, mp), 2.5 * std::pow(d, -(mp.N - mp.p) / mp.p), 1e-12 * bubble_profile(0.0, bp, mp));
}

TEST(Profile, SlopeMatchesDifference) {
    const ModelParams mp = planar();
    BubbleParams bp = unit_bubble(mp);
    bp.eps_b = 1e-4;
    const double d = bubble_width(bp);
    for (double z : {0.3, 0.9, 1.0, 1.7, 12.0, 400.0}) {
        const double r = z * d, h = 1e-6 * r;
        const double fd = (bubble_profile(r - h, bp, mp) - bubble_profile(r + h, bp, mp)) / (2.0 * h);
        EXPECT_NEAR(bubble_profile_slope(r, bp, mp), fd, 1e-6 * fd) << z;
    }
}

TEST(Profile, CutoffShape) {
    EXPECT_EQ(bubble_cutoff(0.3, 0.5), 1.0);
    EXPECT_EQ(bubble_cutoff(1.0, 0.5), 0.0);
    EXPECT_NEAR(bubble_cutoff(0.75, 0.5), 0.5, 1e-15);
}

TEST(Bubble, CutOffBetweenRAndTwoR) {
    ModelParams mp = planar();
    BubbleParams bp = unit_bubble(mp);
    bp.cutoff_inner = 0.2;
    bp.center = {0.5, 0.5, 0.0};
    bp.eps_b = 1e-6;
    const Grid g = make_grid(Geometry::box(2), 41);
    const Field u = talenti_bubble(bp, g, mp);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double r = detail::distance(g.x[i], bp.center, 2);
        if (r >= 0.4) {
            EXPECT_EQ(u[i], 0.0);
        } else if (r <= 0.2) {
            EXPECT_EQ(u[i], bubble_profile(r, bp, mp));
        }
        EXPECT_GE(u[i], 0.0);
    }
}

TEST(Bubble, LinearInAmplitude) {
    const ModelParams mp = planar();
    BubbleParams bp = unit_bubble(mp);
    bp.cutoff_inner = 0.2;
    bp.center = {0.5, 0.5, 0.0};
    bp.eps_b = 1e-6;
    const Grid g = make_grid(Geometry::box(2), 21);
    const Field a = talenti_bubble(bp, g, mp);
    bp.K = 3.0;
    const Field b = talenti_bubble(bp, g, mp);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(b[i], 3.0 * a[i], 1e-14 * std::abs(b[i]));
}

TEST(Bubble, RejectsBadSetup) {
    ModelParams mp = planar();
    BubbleParams bp = unit_bubble(mp);
    bp.cutoff_inner = 0.3;
    bp.center = {0.5, 0.5, 0.0};
    const Grid g = make_grid(Geometry::box(2), 11);
    EXPECT_THROW(talenti_bubble(bp, g, mp), std::invalid_argument);  // 2r ball leaves the square
    bp.cutoff_inner = 0.2;
    bp.eps_b = 2.0;
    EXPECT_THROW(talenti_bubble(bp, g, mp), std::invalid_argument);
    bp.eps_b = 1e-6;
    mp.p = 2.0;  // N = p
    EXPECT_THROW(talenti_bubble(bp, g, mp), std::invalid_argument);
}

TEST(Tails, GaussianOutsideCube) {
    auto f = [](double r) { return std::exp(-r * r); };
    const double a = 0.7, sq = std::sqrt(std::numbers::pi) * std::erf(a);
    EXPECT_NEAR(outside_cube_integral(2, a, f), std::numbers::pi - sq * sq, 1e-10);
    EXPECT_NEAR(outside_cube_integral(3, a, f), std::pow(std::numbers::pi, 1.5) - sq * sq * sq, 1e-10);
    EXPECT_EQ(sphere_fraction_in_cube(2, 1.0), 1.0);
    EXPECT_EQ(sphere_fraction_in_cube(2, 0.7), 0.0);
}

TEST(Slopes, ExactOnPowerLaw) {
    const std::vector<double> x{1e-3, 1e-2, 0.3}, y{-2.0 * std::pow(1e-3, 1.7), 2.0 * std::pow(1e-2, 1.7), std::pow(0.3, 1.7) * 2.0};
    EXPECT_NEAR(loglog_slope(x, y), 1.7, 1e-12);
}

TEST(Constants, AmplitudeInvariantQuotient) {
    const ModelParams mp = planar();
    BubbleParams bp = unit_bubble(mp);
    const auto a = bubble_constants(bp, eps_ladder(bp.alpha), {1.0, 2.0}, mp, 1.2, false);
    bp.K = 3.0;
    const auto b = bubble_constants(bp, eps_ladder(bp.alpha), {1.0, 2.0}, mp, 1.2, false);
    EXPECT_NEAR(a.constants.S0_est, b.constants.S0_est, 1e-10 * a.constants.S0_est);
    EXPECT_NEAR(b.constants.K1, std::pow(3.0, mp.p) * a.constants.K1, 1e-10 * b.constants.K1);
}

// lattice quotient of the bubble against the continuum best constant, plus
// the decay rates of the cut-off errors
TEST(Constants, ApproachesTalentiConstant) {
    const ModelParams mp = planar();
    const BubbleParams bp = unit_bubble(mp);
    const auto rep = bubble_constants(bp, eps_ladder(bp.alpha), {2.0, 4.0, 8.0}, mp, 1.2, false);
    const double S = talenti_constant(2.0, 1.25);
    EXPECT_NEAR(S, 4.655869, 1e-5);
    EXPECT_NEAR(rep.constants.S0_est, S, 0.02 * S);
    const auto& S0 = rep.S0_by_kappa;
    EXPECT_LT(std::abs(S0[2] - S0[1]), 0.05 * S0[2]);
    for (std::size_t k = 1; k < S0.size(); ++k) EXPECT_LT(S0[k], S0[k - 1]);
    for (const auto& f : rep.slopes) EXPECT_LT(f.relative_error(), 0.25) << f.quantity << " " << f.fitted;
}

TEST(Constants, SeminormDecayRate) {
    const ModelParams mp = planar();
    const BubbleParams bp = unit_bubble(mp);
    const auto rep = bubble_constants(bp, eps_ladder(bp.alpha), {1.0, 2.0}, mp, 1.2, true);
    bool seen = false;
    for (const auto& f : rep.slopes)
        if (f.quantity == "seminorm") {
            seen = true;
            EXPECT_LT(f.relative_error(), 0.25) << f.fitted;
        }
    EXPECT_TRUE(seen);
}

TEST(Quotient, MatchesTalentiInTwoAndThreeDimensions) {
    ModelParams mp;
    mp.q = 1.1;
    for (auto [N, p, kappas] : {std::tuple{2, 1.5, std::vector<double>{2.0, 4.0, 8.0}},
                                std::tuple{2, 1.25, std::vector<double>{2.0, 4.0, 8.0}},
                                std::tuple{3, 2.0, std::vector<double>{1.0, 2.0, 4.0}}}) {
        mp.N = N;
        mp.p = p;
        const auto qe = sobolev_quotient(mp, kappas);
        const double S = talenti_constant(N, p);
        EXPECT_NEAR(qe.S0, S, 0.01 * S) << N << " " << p;
    }
}

TEST(Constants, RejectsShortLadders) {
    const ModelParams mp = planar();
    const BubbleParams bp = unit_bubble(mp);
    EXPECT_THROW(bubble_constants(bp, {1e-4, 1e-5}, {1.0, 2.0}, mp, 1.2), std::invalid_argument);
    EXPECT_THROW(bubble_constants(bp, {1e-4, 1e-5, 1e-6}, {2.0}, mp, 1.2), std::invalid_argument);
    EXPECT_THROW(bubble_constants(bp, {1e-4, 1e-5, 1e-6}, {2.0, 1.0}, mp, 1.2), std::invalid_argument);
}
