#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "mlap/solvers.hpp"

using namespace mlap;

namespace {

ModelParams params(int N, double p, double q, double s, double eps, double lambda, std::optional<double> r = {}) {
    ModelParams mp;
    mp.N = N;
    mp.p = p;
    mp.q = q;
    mp.s = s;
    mp.eps = eps;
    mp.lambda = lambda;
    mp.r = r;
    return mp;
}

Field sine_bump(const Grid& g) {
    return sample(g, [&](const auto& x) {
        double v = 1.0;
        for (int a = 0; a < g.dim; ++a) v *= std::sin(std::numbers::pi * x[a]);
        return v;
    });
}

double max_diff(const Field& a, const Field& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST(InnerSolve, ParabolaInOneDimension) {
    const Operator op(make_grid(Geometry::box(1), 64), params(1, 2.0, 1.5, 0.5, 0.0, 0.0, 4.0));
    const Field rhs(op.size(), op.vol());
    const auto rep = solve_inner(rhs, op, 1e-12);
    ASSERT_TRUE(rep.converged);
    const Field exact = sample(op.grid(), [](const auto& x) { return 0.5 * x[0] * (1.0 - x[0]); });
    EXPECT_LT(max_diff(rep.field, exact), 1e-3 * sup_norm(exact));
}

TEST(InnerSolve, ZeroRightSideGivesZero) {
    const Operator op(make_grid(Geometry::box(2), 8), params(2, 1.5, 1.2, 0.5, 0.5, 0.0));
    const auto rep = solve_inner(op.grid().zeros(), op, 1e-10);
    EXPECT_TRUE(rep.converged);
    EXPECT_EQ(sup_norm(rep.field), 0.0);
    EXPECT_THROW(solve_inner(Field(3, 1.0), op, 1e-10), std::invalid_argument);
    EXPECT_THROW(solve_inner(op.grid().zeros(), op, 0.0), std::invalid_argument);
}

TEST(InnerSolve, PositiveRightSideGivesPositiveSolution) {
    for (double p : {1.5, 2.0, 3.0}) {
        const Operator op(make_grid(Geometry::box(2), 10), params(2, p, 1.2, 0.5, 0.5, 0.0, 4.0));
        const Field rhs(op.size(), op.vol());
        const auto rep = solve_inner(rhs, op, 1e-7);
        EXPECT_TRUE(rep.converged) << p;
        for (double v : rep.field) EXPECT_GT(v, 0.0) << p;
    }
}

TEST(Descent, NewtonFinishMatchesQuasiNewton) {
    const Operator op(make_grid(Geometry::box(2), 12), params(2, 2.0, 1.5, 0.5, 0.5, 2.0, 4.0));
    DescentOptions a, b;
    a.tol = b.tol = 1e-10;
    b.newton = false;
    b.max_iter = 20000;
    const Field x0 = sine_bump(op.grid());
    const auto ra = descend(op, ModeJ{}, x0, a), rb = descend(op, ModeJ{}, x0, b);
    ASSERT_TRUE(ra.converged);
    ASSERT_TRUE(rb.converged);
    EXPECT_LT(max_diff(ra.field, rb.field), 1e-8 * sup_norm(ra.field));
}

TEST(Sublinear, NegativeEnergyAndExactScaling) {
    for (double p : {1.5, 2.0}) {
        const Operator op(make_grid(Geometry::box(2), 10), params(2, p, 1.2, 0.5, 0.5, 3.0));
        const auto w1 = solve_sublinear(op, 1e-9);
        const auto w2 = solve_sublinear(op.with_lambda(6.0), 1e-9);
        EXPECT_LT(w1.energy.total, 0.0);
        for (double v : w1.field) EXPECT_GT(v, 0.0);
        const double ratio = sup_norm(w2.field) / sup_norm(w1.field);
        EXPECT_NEAR(ratio, std::pow(2.0, 1.0 / (p - 1.2)), 1e-3 * ratio) << p;
    }
}

TEST(Sublinear, StartIndependent) {
    const Operator op(make_grid(Geometry::box(2), 10), params(2, 2.0, 1.5, 0.5, 0.5, 3.0));
    const auto a = solve_sublinear(op, 1e-10);
    Field other(op.size(), 0.7);
    const auto b = solve_sublinear(op, 1e-10, other);
    EXPECT_LT(max_diff(a.field, b.field), 1e-8 * sup_norm(a.field));
    EXPECT_THROW(solve_sublinear(op.with_lambda(0.0), 1e-8), std::invalid_argument);
}

TEST(Eigen, LaplacianOnUnitInterval) {
    const Operator op(make_grid(Geometry::box(1), 257), params(1, 2.0, 1.5, 0.5, 0.0, 0.0, 4.0));
    const auto ep = principal_eigenpair(op, 1e-9);
    ASSERT_TRUE(ep.converged);
    const double pi2 = std::numbers::pi * std::numbers::pi;
    EXPECT_NEAR(ep.lambda1, pi2, 0.02 * pi2);
    for (double v : ep.e1) EXPECT_GT(v, 0.0);
    EXPECT_NEAR(lt_norm(ep.e1, op.grid(), 2.0), 1.0, 1e-12);
}

TEST(Eigen, NondecreasingInOperatorWeight) {
    const Operator base(make_grid(Geometry::box(1), 65), params(1, 1.5, 1.2, 0.5, 0.0, 0.0, 4.0));
    double prev = 0.0;
    for (double eps : {0.0, 0.1, 0.4, 1.0}) {
        const auto ep = principal_eigenpair(base.with_eps(eps), 1e-7);
        EXPECT_TRUE(ep.converged);
        EXPECT_GE(ep.lambda1, prev);
        prev = ep.lambda1;
    }
}

TEST(Ball, MinimizerHasNegativeEnergy) {
    const Operator op(make_grid(Geometry::box(1), 33), params(1, 2.0, 1.5, 0.5, 0.2, 0.5, 4.0));
    const auto rep = minimize_in_ball(op, 1.0, 1e-9);
    ASSERT_TRUE(rep.converged) << rep.status;
    EXPECT_LT(rep.energy.total, 0.0);
    EXPECT_LT(op.rho(rep.field), 1.0);
    EXPECT_THROW(minimize_in_ball(op, 0.0, 1e-9), std::invalid_argument);
}

TEST(Monotone, NondecreasingIteratesAboveSublinearSolution) {
    const Operator op(make_grid(Geometry::box(1), 65), params(1, 2.0, 1.5, 0.5, 0.2, 6.0, 4.0));
    const auto w = solve_sublinear(op, 1e-12);
    MonotoneTrace tr;
    MonotoneOptions mo;
    mo.tol = 1e-14;
    const auto z = monotone_iterate(w.field, std::nullopt, op, mo, &tr);
    ASSERT_TRUE(z.converged) << z.status;
    EXPECT_LE(tr.worst_order_violation, 1e-10 * std::max(1.0, sup_norm(z.field)));
    for (std::size_t k = 1; k < tr.sup_norms.size(); ++k) EXPECT_GE(tr.sup_norms[k], tr.sup_norms[k - 1]);
    for (std::size_t i = 0; i < z.field.size(); ++i) EXPECT_GE(z.field[i], w.field[i]);
    EXPECT_GT(sup_norm(z.field), sup_norm(w.field));
    EXPECT_LT(z.energy.total, 0.0);
    EXPECT_LT(residual_dual_norm(op, z.field).norm, 1e-6 * residual_norm_of(Field(op.size(), op.vol()), op.vol()));

    // the limit is its own sub- and supersolution
    MonotoneTrace tr2;
    const auto again = monotone_iterate(z.field, z.field, op, {}, &tr2);
    EXPECT_TRUE(again.converged);
    EXPECT_EQ(again.iterations, 1);
}

TEST(Monotone, RejectsBadOrdering) {
    const Operator op(make_grid(Geometry::box(1), 17), params(1, 2.0, 1.5, 0.5, 0.2, 1.0, 4.0));
    Field lo(op.size(), 0.2), hi(op.size(), 0.1);
    EXPECT_THROW(monotone_iterate(lo, hi, op), std::invalid_argument);
    EXPECT_THROW(monotone_iterate(Field(op.size(), -1.0), std::nullopt, op), std::invalid_argument);
    // a supersolution that is too small is detected as a breach
    const auto w = solve_sublinear(op, 1e-12);
    EXPECT_THROW(monotone_iterate(w.field, w.field, op.with_lambda(3.0)), OrderingError);
}

TEST(Truncated, PinchedBetweenSubAndSuper) {
    const Operator op(make_grid(Geometry::box(1), 33), params(1, 2.0, 1.5, 0.5, 0.2, 6.0, 4.0));
    const auto w = solve_sublinear(op, 1e-12);
    const auto z = monotone_iterate(w.field, std::nullopt, op);
    Field hi(z.field);
    for (auto& v : hi) v *= 2.0;
    const auto rep = minimize_truncated(w.field, hi, op, 1e-10);
    EXPECT_TRUE(rep.converged) << rep.status;
    EXPECT_LT(max_diff(rep.field, z.field), 1e-6 * sup_norm(z.field));
}

TEST(Minres, SolvesIndefiniteSystem) {
    const Operator op(make_grid(Geometry::box(1), 40), params(1, 2.0, 1.5, 0.5, 0.0, 0.0, 4.0));
    const double shift = 30.0 * op.vol();  // between the first two eigenvalues, so indefinite
    auto A = [&](const Field& v) {
        Field a = op.apply(v);
        for (std::size_t i = 0; i < v.size(); ++i) a[i] -= shift * v[i];
        return a;
    };
    const Field b = sine_bump(op.grid());
    int iters = 0;
    const Field x = minres(op, A, b, 1e-12, 500, &iters);
    Field r = A(x);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] -= b[i];
    EXPECT_LT(std::sqrt(dot(r, r)), 1e-9 * std::sqrt(dot(b, b)));
    EXPECT_LT(iters, 100);
}

TEST(MountainPass, SecondSolutionAboveMinimizer) {
    const Operator op(make_grid(Geometry::box(1), 33), params(1, 2.0, 1.5, 0.5, 0.2, 0.5, 4.0));
    const auto base = minimize_in_ball(op, 1.0, 1e-10);
    ASSERT_TRUE(base.converged);
    Field top = principal_eigenpair(op, 1e-8).e1;
    for (auto& v : top) v *= 6.0;
    ASSERT_LT(energy(op, top).total, base.energy.total);
    MountainPassOptions mo;
    mo.tol = 1e-8;
    MountainPassTrace tr;
    const auto mp = mountain_pass(base, top, op, mo, &tr);
    ASSERT_TRUE(mp.converged) << mp.status;
    EXPECT_GT(mp.energy.total, base.energy.total);
    EXPECT_GT(max_diff(mp.field, base.field), 100.0 * mo.tol);
    for (double v : mp.field) EXPECT_GT(v, 0.0);
    EXPECT_THROW(mountain_pass(base, base.field, op), std::invalid_argument);
}

TEST(Lambda, BracketAboveSharpThreshold) {
    const Operator op(make_grid(Geometry::box(1), 33), params(1, 2.0, 1.5, 0.5, 0.2, 1.0, 4.0));
    LambdaOptions lo;
    const auto br = estimate_Lambda(op, 1.0, 200.0, 1.0, lo);
    EXPECT_GE(br.lo, 1.0);
    EXPECT_LE(br.hi - br.lo, 1.0);
    EXPECT_TRUE(std::isfinite(br.hi));
    EXPECT_FALSE(probe_lambda(op, 2.0 * br.hi, br.cap, lo).solvable);
    EXPECT_TRUE(probe_lambda(op, br.lo, br.cap, lo).solvable);
}

TEST(Embedding, ConstantsBoundTrialRatios) {
    const Operator op(make_grid(Geometry::box(2), 10), params(2, 1.5, 1.2, 0.5, 0.5, 1.0));
    const auto ec = estimate_embedding_constants(op, 1.0, 1e-8);
    EXPECT_GT(ec.C2, 0.0);
    EXPECT_GE(ec.C1, ec.C1_trial);
    EXPECT_GE(ec.C1, ec.C1_sobolev);
    const Field u = sine_bump(op.grid());
    const double q = 1.2;
    EXPECT_LE(std::pow(lt_norm(u, op.grid(), q) / op.rho(u), q) / q, ec.C2 * (1.0 + 1e-6));
}
