// Acceptance run: one line per criterion, nonzero exit if any fails.
// Experiment criteria read the shipped configs in tools/configs.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <string>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "mlap/driver.hpp"

using namespace mlap;

namespace {

struct Outcome {
    bool ok = false;
    std::string detail;
};

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

Field random_field(std::size_t n, std::uint64_t seed, double lo, double hi) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(lo, hi);
    Field f(n);
    for (auto& v : f) v = U(rng);
    return f;
}

std::string cat(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

// first JSON of every experiment run, for the rerun check
std::map<std::string, std::string> first_runs;

ExperimentReport run_config(const std::string& file) {
    const auto cfg = load_config(std::string(MLAP_CONFIG_DIR) + "/" + file);
    auto rep = run_experiment(cfg);
    first_runs.emplace(file, to_json(rep).dump());
    return rep;
}

Outcome from_report(const ExperimentReport& rep) {
    Outcome o{rep.passed(), {}};
    for (const auto& v : rep.verdicts)
        if (v.status != Status::pass) o.detail += v.name + " " + to_string(v.status) + " (" + v.detail + "); ";
    if (o.detail.empty()) o.detail = std::to_string(rep.verdicts.size()) + " verdicts pass";
    return o;
}

// Five-point difference of f at 0. The step comes from a ladder: the pair of
// consecutive steps that agree best wins, which keeps both the |t|^p kinks
// (small steps) and roundoff in large energies (large steps) out of the way.
double directional_difference(const std::function<double(double)>& f) {
    auto d5 = [&](double h) { return (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h); };
    double prev = d5(1e-3), best = std::numeric_limits<double>::infinity(), est = prev;
    for (double h = 1e-4; h > 1e-9; h /= 10.0) {
        const double cur = d5(h);
        if (std::abs(cur - prev) < best) {
            best = std::abs(cur - prev);
            est = cur;
        }
        prev = cur;
    }
    return est;
}

// ---------------------------------------------------------------------------

Outcome gradient_consistency() {
    const std::vector<ModelParams> tuples{params(2, 1.5, 1.2, 0.5, 0.5, 0.8), params(2, 1.8, 1.3, 0.3, 1.0, 0.4),
                                          params(3, 2.0, 1.5, 0.5, 0.05, 1.0), params(1, 2.0, 1.5, 0.7, 0.2, 2.0, 5.0),
                                          params(2, 3.0, 2.5, 0.4, 0.3, 0.6, 4.0)};
    double worst = 0.0;
    int k = 0, n = 0;
    for (const auto& mp : tuples) {
        const int res = mp.N == 3 ? 6 : (mp.N == 2 ? 10 : 40);
        const Operator op(make_grid(Geometry::box(mp.N), res), mp);
        for (int t = 0; t < 20; ++t, ++n) {
            const Field u = random_field(op.size(), 500 + k++, 0.05, 1.5);
            const Field d = random_field(op.size(), 500 + k++, -1.0, 1.0);
            Field g;
            energy(op, u, ModeI{}, &g);
            const double fd = directional_difference([&](double step) {
                Field v(u);
                for (std::size_t i = 0; i < v.size(); ++i) v[i] += step * d[i];
                return energy(op, v).total;
            });
            const double gd = dot(g, d);
            worst = std::max(worst, std::abs(fd - gd) / std::max(std::abs(fd), std::abs(gd)));
        }
    }
    return {worst < 1e-6, cat("%g fields, worst relative mismatch %.2e", n, worst)};
}

// principal value of ∫ (u(x) - u(y)) |x - y|^{-1-2s} dy for the bump (4x(1-x))^3
double bump(double x) { return x > 0.0 && x < 1.0 ? std::pow(4.0 * x * (1.0 - x), 3) : 0.0; }

double bump_second(double x) {
    const double w = x - x * x, dw = 1.0 - 2.0 * x;
    return 384.0 * w * dw * dw - 384.0 * w * w;
}

double fractional_oracle(double x, double s) {
    using boost::math::quadrature::gauss_kronrod;
    auto f = [&](double t) { return (2.0 * bump(x) - bump(x + t) - bump(x - t)) / std::pow(t, 1.0 + 2.0 * s); };
    const double a = std::min(x, 1.0 - x), b = std::max(x, 1.0 - x);
    const double delta = std::min(1e-4, 0.5 * a);
    const double head = -bump_second(x) * std::pow(delta, 2.0 - 2.0 * s) / (2.0 - 2.0 * s);
    return head + gauss_kronrod<double, 61>::integrate(f, delta, a, 12, 1e-10) +
           gauss_kronrod<double, 61>::integrate(f, a, b, 12, 1e-10) + 2.0 * bump(x) * std::pow(b, -2.0 * s) / (2.0 * s);
}

// against the continuum integral by adaptive quadrature, and against the same
// lattice operator at 4x resolution evaluated at the coarse nodes
Outcome fractional_convergence() {
    double worst = 0.0, worst_fine = 0.0;
    for (double s : {0.3, 0.5, 0.7}) {
        const Operator op(make_grid(Geometry::box(1), 129), params(1, 2.0, 1.5, s, 1.0, 0.0, 4.0));
        const Field u = sample(op.grid(), [](const auto& x) { return bump(x[0]); });
        const Field a = op.apply(u, OperatorMode::nonlocal);
        const Operator fine(make_grid(Geometry::box(1), 4 * 129), op.params());
        const Field uf = sample(fine.grid(), [](const auto& x) { return bump(x[0]); });
        const Field af = fine.apply(uf, OperatorMode::nonlocal);
        double err = 0.0, errf = 0.0, scale = 0.0;
        for (std::size_t i = 0; i < u.size(); ++i) {
            const double x = op.grid().x[i][0];
            const double ref = fractional_oracle(x, s);
            // the coarse centre sits midway between fine centres 4i+1 and 4i+2
            const double reff = 0.5 * (af[4 * i + 1] + af[4 * i + 2]) / (2.0 * fine.vol());
            err = std::max(err, std::abs(a[i] / (2.0 * op.vol()) - ref));
            errf = std::max(errf, std::abs(a[i] / (2.0 * op.vol()) - reff));
            scale = std::max(scale, std::abs(ref));
        }
        worst = std::max(worst, err / scale);
        worst_fine = std::max(worst_fine, errf / scale);
    }
    return {worst < 0.03 && worst_fine < 0.03,
            cat("max-norm error %.2f%% vs quadrature, %.2f%% vs 4x lattice", 100 * worst, 100 * worst_fine)};
}

Outcome eigenpair() {
    const Operator base(make_grid(Geometry::box(1), 257), params(1, 2.0, 1.5, 0.5, 0.0, 0.0, 4.0));
    const auto e0 = principal_eigenpair(base, 1e-9);
    const double pi2 = std::numbers::pi * std::numbers::pi;
    const double rel = std::abs(e0.lambda1 - pi2) / pi2;
    bool mono = e0.converged;
    double prev = e0.lambda1;
    std::string vals;
    for (double eps : {0.1, 0.4, 1.0}) {
        const auto e = principal_eigenpair(base.with_eps(eps), 1e-9);
        mono = mono && e.converged && e.lambda1 >= prev;
        prev = e.lambda1;
        vals += cat(" %.4f", e.lambda1);
    }
    return {rel < 0.02 && mono, cat("lambda1(eps=0) %.6f, off pi^2 by %.3f%%;", e0.lambda1, 100 * rel) + " eps 0.1/0.4/1:" + vals};
}

Outcome sublinear_scaling() {
    double worst = 0.0;
    for (const auto& mp : {params(2, 1.5, 1.2, 0.5, 0.5, 3.0), params(2, 2.0, 1.5, 0.5, 0.5, 3.0, 4.0),
                           params(1, 3.0, 2.0, 0.3, 1.0, 1.0, 5.0)}) {
        const Operator op(make_grid(Geometry::box(mp.N), mp.N == 1 ? 65 : 16), mp);
        const auto a = solve_sublinear(op, 1e-10);
        const auto b = solve_sublinear(op.with_lambda(2.0 * mp.lambda), 1e-10);
        const double ratio = sup_norm(b.field) / sup_norm(a.field), want = std::pow(2.0, 1.0 / (mp.p - mp.q));
        worst = std::max(worst, std::abs(ratio - want) / want);
    }
    return {worst < 0.01, cat("worst relative deviation from 2^{1/(p-q)}: %.2e", worst)};
}

Outcome monotone_iteration() {
    bool ok = true;
    std::string detail;
    for (const auto& [mp, res] : {std::pair{params(1, 2.0, 1.5, 0.5, 0.2, 6.0, 4.0), 65}, std::pair{params(2, 2.0, 1.5, 0.5, 0.5, 2.0, 4.0), 16},
                                  std::pair{params(2, 1.5, 1.2, 0.5, 0.5, 10.0), 16}}) {
        const Operator op(make_grid(Geometry::box(mp.N), res), mp);
        const auto w = solve_sublinear(op, 1e-12);
        MonotoneTrace tr;
        MonotoneOptions mo;
        mo.tol = 1e-12;
        const auto z = monotone_iterate(w.field, std::nullopt, op, mo, &tr);
        double below = 0.0;
        for (std::size_t i = 0; i < z.field.size(); ++i) below = std::max(below, w.field[i] - z.field[i]);
        const auto again = monotone_iterate(z.field, z.field, op);
        const bool here = z.converged && tr.worst_order_violation <= 1e-10 && below <= 1e-10 && z.energy.total < 0.0 &&
                          again.converged && again.iterations == 1;
        ok = ok && here;
        detail += cat("[N=%g p=%g: order slack %.1e, ", mp.N, mp.p, tr.worst_order_violation) +
                  cat("energy %.3g, fixed point in %g step] ", z.energy.total, again.iterations);
    }
    return {ok, detail};
}

Outcome inequalities() {
    bool ok = true;
    double drift = 0.0;
    for (double p : {1.5, 2.0, 2.5, 3.2}) {
        const auto rep = inequality_suite(10000, params(4, p, 1.2, 0.5, 1.0, 0.0));
        ok = ok && rep.checks.size() == 6 && rep.all_pass();
        for (const auto& c : rep.checks) drift = std::max(drift, c.drift);
    }
    return {ok, cat("6 inequalities at p = 1.5, 2, 2.5, 3.2; worst constant drift %.2f%%", 100 * drift)};
}

Outcome determinism() {
    int same = 0, total = 0;
    std::string differ;
    for (const auto& [file, json] : first_runs) {
        ++total;
        const auto rep = run_experiment(load_config(std::string(MLAP_CONFIG_DIR) + "/" + file));
        if (to_json(rep).dump() == json)
            ++same;
        else
            differ += file + " ";
    }
    return {total > 0 && same == total, cat("%g of %g suites bit-identical on rerun", same, total) + (differ.empty() ? "" : ": " + differ)};
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* what;
        double limit_s;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> list{
        {1, "gradient consistency", 30, gradient_consistency},
        {2, "fractional operator convergence", 60, fractional_convergence},
        {3, "eigenpair oracle", 60, eigenpair},
        {4, "sublinear scaling law", 60, sublinear_scaling},
        {5, "monotone iteration", 120, monotone_iteration},
        {6, "branch and extremal bracket", 600, [] { return from_report(run_config("branch.json")); }},
        {7, "nonexistence evidence", 300, [] { return from_report(run_config("nonexistence.json")); }},
        {8, "scaling derivative", 60, [] { return from_report(run_config("scaling.json")); }},
        {9, "bubble asymptotics", 300, [] { return from_report(run_config("bubbles.json")); }},
        {10, "two-solution pipeline", 1200, [] { return from_report(run_config("two_solution.json")); }},
        {11, "beta sequence", 120, [] { return from_report(run_config("beta_seq.json")); }},
        {12, "inequality suite", 30, inequalities},
        {13, "determinism", 1e9,
         [] {
             // the remaining experiments join the rerun set
             for (const char* f : {"thresholds.json", "solve.json", "harnack.json"}) run_config(f);
             return determinism();
         }},
    };
    int failed = 0;
    for (const auto& c : list) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = secs <= c.limit_s;
        const bool pass = o.ok && in_time;
        if (!pass) ++failed;
        std::printf("criterion %2d %s  %-32s %s (%.1f s%s)\n", c.id, pass ? "PASS" : "FAIL", c.what, o.detail.c_str(), secs,
                    in_time ? "" : ", over the time limit");
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria pass\n", static_cast<int>(list.size()) - failed, list.size());
    return failed ? 1 : 0;
}
