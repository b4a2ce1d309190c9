#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <array>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/zeta.hpp>

#include "lattice.hpp"

namespace mlap {

// Power laws φ(t) = |t|^{p-2} t and |t|^p, with closed forms for common exponents.
// For a squared gradient G ≥ 0, weight(G) = G^{(p-2)/2} (0 at G = 0) and
// energy(G) = G^{p/2}.
struct PowSquare {
    double p() const { return 2.0; }
    double phi(double t) const { return t; }
    double abs_p(double t) const { return t * t; }
    double weight(double) const { return 1.0; }
    double energy(double G) const { return G; }
};
struct PowThreeHalves {
    double p() const { return 1.5; }
    double phi(double t) const { return std::copysign(std::sqrt(std::abs(t)), t); }
    double abs_p(double t) const { return std::abs(t) * std::sqrt(std::abs(t)); }
    double weight(double G) const { return G > 0.0 ? 1.0 / std::sqrt(std::sqrt(G)) : 0.0; }
    double energy(double G) const { return std::sqrt(G) * std::sqrt(std::sqrt(G)); }
};
struct PowFiveQuarters {
    double p() const { return 1.25; }
    double phi(double t) const { return std::copysign(std::sqrt(std::sqrt(std::abs(t))), t); }
    double abs_p(double t) const { return std::abs(t) * std::sqrt(std::sqrt(std::abs(t))); }
    double weight(double G) const { return G > 0.0 ? std::pow(G, -0.375) : 0.0; }
    double energy(double G) const { return std::pow(G, 0.625); }
};
struct PowCube {
    double p() const { return 3.0; }
    double phi(double t) const { return t * std::abs(t); }
    double abs_p(double t) const { return std::abs(t) * t * t; }
    double weight(double G) const { return std::sqrt(G); }
    double energy(double G) const { return G * std::sqrt(G); }
};
struct PowGeneric {
    double e;
    double p() const { return e; }
    double phi(double t) const { return std::copysign(std::pow(std::abs(t), e - 1.0), t); }
    double abs_p(double t) const { return std::pow(std::abs(t), e); }
    double weight(double G) const { return G > 0.0 ? std::pow(G, 0.5 * (e - 2.0)) : 0.0; }
    double energy(double G) const { return std::pow(G, 0.5 * e); }
};

template <class F>
decltype(auto) with_power(double p, F&& f) {
    if (p == 2.0) return f(PowSquare{});
    if (p == 1.5) return f(PowThreeHalves{});
    if (p == 1.25) return f(PowFiveQuarters{});
    if (p == 3.0) return f(PowCube{});
    return f(PowGeneric{p});
}

/// Faces of the cell-centred lattice restricted to interior nodes. A face between
/// two interior nodes has length h; a face to the exterior carries the distance
/// to the Dirichlet boundary (h/2 on boxes, the axis distance to the sphere
/// clamped to [h/4, h] on balls).
struct LocalStencil {
    static constexpr std::uint32_t boundary = std::numeric_limits<std::uint32_t>::max();
    std::vector<std::uint32_t> a, b;
    std::vector<double> area, ell;

    std::size_t size() const { return a.size(); }
};

inline LocalStencil make_stencil(const Grid& g) {
    LocalStencil st;
    const Geometry& G = g.geom;
    for (std::size_t i = 0; i < g.size(); ++i) {
        for (int ax = 0; ax < g.dim; ++ax) {
            const double area = g.vol / g.h[ax];
            for (int dir = -1; dir <= 1; dir += 2) {
                auto c = g.cell[i];
                c[ax] += dir;
                std::int64_t j = -1;
                if (c[ax] >= 0 && c[ax] < g.n[ax]) j = g.node_to_interior[g.flatten(c)];
                if (j >= 0) {
                    if (dir == 1) {
                        st.a.push_back(static_cast<std::uint32_t>(i));
                        st.b.push_back(static_cast<std::uint32_t>(j));
                        st.area.push_back(area);
                        st.ell.push_back(g.h[ax]);
                    }
                    continue;
                }
                double ell = 0.5 * g.h[ax];
                if (G.shape == Shape::ball) {
                    double xc = 0.0, r2 = 0.0;
                    for (int k = 0; k < g.dim; ++k) {
                        const double y = g.x[i][k] - G.center[k];
                        r2 += y * y;
                        if (k == ax) xc = y * dir;
                    }
                    const double t = -xc + std::sqrt(xc * xc + G.radius * G.radius - r2);
                    ell = std::clamp(t, 0.25 * g.h[ax], g.h[ax]);
                }
                st.a.push_back(static_cast<std::uint32_t>(i));
                st.b.push_back(LocalStencil::boundary);
                st.area.push_back(area);
                st.ell.push_back(ell);
            }
        }
    }
    return st;
}

/// Finite part of Σ_{k ∈ Z^d \ 0} |k_1|^p |k|^{-m}, the leading discrepancy between
/// the lattice pair sum and the singular integral it approximates. Requires
/// d + p - m > 0; d = 1 is the Riemann zeta value 2ζ(m - p), higher dimensions use
/// a smoothly cut-off lattice sum minus its exact continuum counterpart.
inline double lattice_zeta(int d, double p, double m, int cutoff = 0) {
    const double e = d + p - m;
    if (!(e > 0.0)) throw std::invalid_argument("lattice_zeta: exponent outside the regularisable range");
    if (d == 1) return 2.0 * boost::math::zeta(m - p);
    auto bump = [](double x) { return x <= 0.0 ? 0.0 : std::exp(-1.0 / x); };
    auto psi = [&](double t) {
        if (t <= 0.5) return 1.0;
        if (t >= 1.0) return 0.0;
        const double x = (t - 0.5) / 0.5;
        return bump(1.0 - x) / (bump(1.0 - x) + bump(x));
    };
    const int R = cutoff > 0 ? cutoff : (d == 2 ? 64 : 40);
    double S = 0.0;
    const int K3 = d == 3 ? R : 0;
    for (int k3 = -K3; k3 <= K3; ++k3)
        for (int k2 = -R; k2 <= R; ++k2)
            for (int k1 = -R; k1 <= R; ++k1) {
                if (k1 == 0 && k2 == 0 && k3 == 0) continue;
                const double r2 = double(k1) * k1 + double(k2) * k2 + double(k3) * k3;
                const double t = std::sqrt(r2) / R;
                if (t >= 1.0) continue;
                S += std::pow(std::abs(double(k1)), p) * std::pow(r2, -0.5 * m) * psi(t);
            }
    using boost::math::quadrature::gauss_kronrod;
    const double M = std::pow(0.5, e) / e +
                     gauss_kronrod<double, 31>::integrate([&](double t) { return std::pow(t, e - 1.0) * psi(t); }, 0.5,
                                                          1.0, 15, 1e-14);
    const double A = 2.0 * std::pow(std::numbers::pi, 0.5 * (d - 1)) * boost::math::tgamma(0.5 * (p + 1.0)) /
                     boost::math::tgamma(0.5 * (d + p));
    return S - A * std::pow(double(R), e) * M;
}

struct KernelOptions {
    bool near_field_correction = true;
    std::size_t max_nodes = 80000;
    std::optional<double> truncation_radius;
};

/// Pair weights w_ij = 2 vol / |x_i - x_j|^{N+sp}. The lattice is translation
/// invariant, so the weights are stored once per integer offset.
struct KernelMatrix {
    int dim = 1;
    double exponent = 0.0;  // N + sp
    double vol = 0.0;
    std::array<std::int64_t, 3> tstride{0, 0, 0};
    std::int64_t centre = 0;
    std::vector<double> table;
    std::vector<std::int64_t> key;
    ExteriorTail tail;
    double near_field = 0.0;  // coefficient of the local p-energy added to the pair sum

    std::size_t size() const { return key.size(); }
    double weight(std::size_t i, std::size_t j) const {
        if (i == j) return 0.0;
        return table[static_cast<std::size_t>(key[i] + centre - key[j])];
    }
};

inline KernelMatrix assemble_kernel(const Grid& g, const ModelParams& mp, const KernelOptions& opt = {}) {
    if (g.size() > opt.max_nodes) throw std::length_error("assemble_kernel: node count exceeds the pair budget");
    KernelMatrix K;
    K.dim = g.dim;
    K.exponent = mp.N + mp.s * mp.p;
    K.vol = g.vol;
    std::array<int, 3> ext{1, 1, 1};
    std::int64_t stride = 1;
    for (int a = 0; a < 3; ++a) {
        ext[a] = a < g.dim ? 2 * g.n[a] - 1 : 1;
        K.tstride[a] = stride;
        stride *= ext[a];
    }
    K.table.assign(static_cast<std::size_t>(stride), 0.0);
    for (int k2 = 0; k2 < ext[2]; ++k2)
        for (int k1 = 0; k1 < ext[1]; ++k1)
            for (int k0 = 0; k0 < ext[0]; ++k0) {
                const std::array<int, 3> k{k0 - (ext[0] - 1) / 2, k1 - (ext[1] - 1) / 2, k2 - (ext[2] - 1) / 2};
                double r2 = 0.0;
                for (int a = 0; a < g.dim; ++a) r2 += (k[a] * g.h[a]) * (k[a] * g.h[a]);
                const std::size_t idx = static_cast<std::size_t>(k0 * K.tstride[0] + k1 * K.tstride[1] + k2 * K.tstride[2]);
                K.table[idx] = r2 > 0.0 ? 2.0 * g.vol * std::pow(r2, -0.5 * K.exponent) : 0.0;
            }
    K.centre = 0;
    for (int a = 0; a < 3; ++a) K.centre += static_cast<std::int64_t>((ext[a] - 1) / 2) * K.tstride[a];
    K.key.resize(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        std::int64_t k = 0;
        for (int a = 0; a < 3; ++a) k += static_cast<std::int64_t>(g.cell[i][a]) * K.tstride[a];
        K.key[i] = k;
    }
    K.tail = exterior_tail(g, mp.N, mp.s * mp.p, opt.truncation_radius);
    const double e = g.dim + mp.p - K.exponent;
    if (opt.near_field_correction && g.uniform_spacing() && e > 0.0) {
        const double Z = lattice_zeta(g.dim, mp.p, K.exponent);
        K.near_field = std::max(0.0, -Z * std::pow(g.h[0], e));
    }
    return K;
}

enum class OperatorMode { local, nonlocal, mixed };

/// Discrete mixed operator -Δ_p + ε(-Δ_p)^s on a grid, in weak (volume-weighted)
/// form: apply(u) is the gradient of (1/p)·rho_pp(u).
class Operator {
public:
    Operator(Grid grid, ModelParams mp, KernelOptions opt = {})
        : grid_(std::move(grid)), mp_(std::move(mp)), opt_(opt) {
        if (!(mp_.p > 1.0)) throw std::invalid_argument("Operator: p must exceed 1");
        if (!(mp_.s > 0.0 && mp_.s < 1.0)) throw std::invalid_argument("Operator: s must lie in (0, 1)");
        stencil_ = make_stencil(grid_);
        inv_ell2_.resize(stencil_.size());
        for (std::size_t f = 0; f < stencil_.size(); ++f) inv_ell2_[f] = 1.0 / (stencil_.ell[f] * stencil_.ell[f]);
        kernel_ = assemble_kernel(grid_, mp_, opt_);
        build_preconditioner();
    }

    const Grid& grid() const { return grid_; }
    const ModelParams& params() const { return mp_; }
    const KernelMatrix& kernel() const { return kernel_; }
    const LocalStencil& stencil() const { return stencil_; }
    std::size_t size() const { return grid_.size(); }
    double vol() const { return grid_.vol; }

    /// Same discretisation with a different operator weight ε.
    Operator with_eps(double eps) const {
        Operator o(*this);
        o.mp_.eps = eps;
        return o;
    }
    Operator with_lambda(double lambda) const {
        Operator o(*this);
        o.mp_.lambda = lambda;
        return o;
    }
    ModelParams& mutable_params() { return mp_; }

    Field apply(const Field& u, OperatorMode mode = OperatorMode::mixed) const {
        check(u);
        Field out(u.size(), 0.0);
        add_apply(u, mode, out);
        return out;
    }

    void add_apply(const Field& u, OperatorMode mode, Field& out) const {
        const double p = mp_.p;
        with_power(p, [&](auto pw) {
            if (mode == OperatorMode::local) {
                add_local(pw, u, out, 1.0);
            } else if (mode == OperatorMode::nonlocal) {
                add_nonlocal(pw, u, out, 1.0);
            } else {
                add_local(pw, u, out, 1.0);
                if (mp_.eps != 0.0) add_nonlocal(pw, u, out, mp_.eps);
            }
            return 0;
        });
    }

    /// Σ_i vol·G_i^{p/2}, the discrete ‖∇u‖_p^p; G_i is the mean of the squared
    /// one-sided difference quotients at node i, summed over axes.
    double grad_pp(const Field& u) const {
        check(u);
        const Field& G = squared_gradients(u);
        return with_power(mp_.p, [&](auto pw) {
            double acc = 0.0;
            for (double g : G) acc += pw.energy(g);
            return acc * grid_.vol;
        });
    }

    /// G_i = ½ Σ_{faces at i} (δ/ℓ)², with δ = u_i on faces to the boundary.
    const Field& squared_gradients(const Field& u) const {
        gbuf_.assign(u.size(), 0.0);
        for (std::size_t f = 0; f < stencil_.size(); ++f) {
            const std::uint32_t i = stencil_.a[f], j = stencil_.b[f];
            const double d = j == LocalStencil::boundary ? u[i] : u[i] - u[j];
            const double q = 0.5 * d * d * inv_ell2_[f];
            gbuf_[i] += q;
            if (j != LocalStencil::boundary) gbuf_[j] += q;
        }
        return gbuf_;
    }

    /// ½ Σ w_ij |u_i - u_j|^p vol + Σ 2 T_i |u_i|^p vol, plus the near-field term.
    double gagliardo_pp(const Field& u) const {
        check(u);
        const std::size_t n = u.size();
        const double* tab = kernel_.table.data();
        const std::int64_t* key = kernel_.key.data();
        double pairs = with_power(mp_.p, [&](auto pw) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double ui = u[i];
                const std::int64_t ki = key[i] + kernel_.centre;
                double row = 0.0;
                for (std::size_t j = i + 1; j < n; ++j) row += tab[ki - key[j]] * pw.abs_p(ui - u[j]);
                acc += row;
            }
            return acc;
        });
        double tails = with_power(mp_.p, [&](auto pw) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) acc += 2.0 * kernel_.tail.values[i] * pw.abs_p(u[i]);
            return acc;
        });
        double total = (pairs + tails) * grid_.vol;
        if (kernel_.near_field != 0.0) total += kernel_.near_field * grad_pp(u);
        return total;
    }

    double rho_pp(const Field& u) const {
        const double g = grad_pp(u);
        return mp_.eps != 0.0 ? g + mp_.eps * gagliardo_pp(u) : g;
    }
    double rho(const Field& u) const { return std::pow(rho_pp(u), 1.0 / mp_.p); }

    /// <nonlocal(u), v>; equals gagliardo_pp(u) when v = u.
    double form(const Field& u, const Field& v) const {
        const Field a = apply(u, OperatorMode::nonlocal);
        return dot(a, v);
    }

    /// rho_pp(u) together with its derivative divided by p, i.e. apply(u).
    double rho_pp_with_gradient(const Field& u, Field& grad) const {
        grad = apply(u, OperatorMode::mixed);
        return dot(grad, u);
    }

    /// Solves P x = g with P the p = 2 local stiffness matrix.
    Field precondition(const Field& g) const {
        Eigen::Map<const Eigen::VectorXd> b(g.data(), static_cast<Eigen::Index>(g.size()));
        Eigen::VectorXd x = chol_->solve(b);
        return Field(x.data(), x.data() + x.size());
    }

    /// The p = 2 local stiffness matrix used as preconditioner.
    const Eigen::SparseMatrix<double>& stiffness() const { return stiff_; }

    static constexpr std::size_t dense_hessian_limit = 2048;

    /// Dense Hessian of (1/p)ρ^p at u. For p < 2 squared gradients and pair
    /// differences are floored at floor·max|u| (per unit length for gradients).
    Eigen::MatrixXd hessian(const Field& u, double floor = 1e-12) const {
        check(u);
        const std::size_t n = u.size();
        if (n > dense_hessian_limit) throw std::length_error("Operator::hessian: too many nodes for a dense Hessian");
        const double p = mp_.p;
        const double eta = floor * std::max(sup_norm(u), 1e-300);
        auto slope = [&](double d) { return p == 2.0 ? 1.0 : (p - 1.0) * std::pow(std::max(std::abs(d), eta), p - 2.0); };
        Eigen::MatrixXd H = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        const double lv = (1.0 + mp_.eps * kernel_.near_field) * grid_.vol;
        Field G = squared_gradients(u);
        const double gfloor = p < 2.0 ? eta * eta / (grid_.h[0] * grid_.h[0]) : 0.0;
        Field W(n), R(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double g = std::max(G[i], gfloor);
            W[i] = p == 2.0 ? 1.0 : (g > 0.0 ? std::pow(g, 0.5 * (p - 2.0)) : 0.0);
            R[i] = p == 2.0 || !(g > 0.0) ? 0.0 : 0.5 * (p - 2.0) * std::pow(g, 0.5 * (p - 4.0));
        }
        // ½ vol W_i Σ_f e_f e_f^T / ℓ_f² from both ends of each face
        for (std::size_t f = 0; f < stencil_.size(); ++f) {
            const auto i = static_cast<Eigen::Index>(stencil_.a[f]);
            if (stencil_.b[f] == LocalStencil::boundary) {
                H(i, i) += 0.5 * lv * W[stencil_.a[f]] * inv_ell2_[f];
                continue;
            }
            const auto j = static_cast<Eigen::Index>(stencil_.b[f]);
            const double c = 0.5 * lv * (W[stencil_.a[f]] + W[stencil_.b[f]]) * inv_ell2_[f];
            H(i, i) += c;
            H(j, j) += c;
            H(i, j) -= c;
            H(j, i) -= c;
        }
        // ½ vol (p-2)/2 G_i^{(p-4)/2} ∇G_i ∇G_i^T, with ∇G_i = Σ_{f at i} δ_f e_f / ℓ_f²
        if (p != 2.0) {
            std::vector<std::vector<std::pair<Eigen::Index, double>>> grads(n);
            for (std::size_t f = 0; f < stencil_.size(); ++f) {
                const std::uint32_t a = stencil_.a[f], b = stencil_.b[f];
                const bool bd = b == LocalStencil::boundary;
                const double d = (bd ? u[a] : u[a] - u[b]) * inv_ell2_[f];
                for (std::uint32_t k : {a, b}) {
                    if (k == LocalStencil::boundary) continue;
                    grads[k].emplace_back(static_cast<Eigen::Index>(a), d);
                    if (!bd) grads[k].emplace_back(static_cast<Eigen::Index>(b), -d);
                }
            }
            for (std::size_t i = 0; i < n; ++i) {
                if (R[i] == 0.0) continue;
                const double c = 0.5 * lv * R[i];
                for (const auto& [x, vx] : grads[i])
                    for (const auto& [y, vy] : grads[i]) H(x, y) += c * vx * vy;
            }
        }
        if (mp_.eps != 0.0) {
            const double v = mp_.eps * grid_.vol;
            for (std::size_t i = 0; i < n; ++i) {
                const auto I = static_cast<Eigen::Index>(i);
                for (std::size_t j = i + 1; j < n; ++j) {
                    const auto J = static_cast<Eigen::Index>(j);
                    const double c = v * kernel_.weight(i, j) * slope(u[i] - u[j]);
                    H(I, I) += c;
                    H(J, J) += c;
                    H(I, J) -= c;
                    H(J, I) -= c;
                }
                H(I, I) += v * 2.0 * kernel_.tail.values[i] * slope(u[i]);
            }
        }
        return H;
    }

private:
    template <class P>
    void add_local(const P& pw, const Field& u, Field& out, double scale) const {
        const Field& G = squared_gradients(u);
        wbuf_.resize(G.size());
        for (std::size_t i = 0; i < G.size(); ++i) wbuf_[i] = pw.weight(G[i]);
        const double v = 0.5 * scale * grid_.vol;
        for (std::size_t f = 0; f < stencil_.size(); ++f) {
            const std::uint32_t i = stencil_.a[f], j = stencil_.b[f];
            if (j == LocalStencil::boundary) {
                out[i] += v * wbuf_[i] * u[i] * inv_ell2_[f];
            } else {
                const double g = v * (wbuf_[i] + wbuf_[j]) * (u[i] - u[j]) * inv_ell2_[f];
                out[i] += g;
                out[j] -= g;
            }
        }
    }

    template <class P>
    void add_nonlocal(const P& pw, const Field& u, Field& out, double scale) const {
        const std::size_t n = u.size();
        buf_.assign(n, 0.0);
        double* acc = buf_.data();
        const double* tab = kernel_.table.data();
        const std::int64_t* key = kernel_.key.data();
        for (std::size_t i = 0; i < n; ++i) {
            const double ui = u[i];
            const std::int64_t ki = key[i] + kernel_.centre;
            double row = 0.0;
            for (std::size_t j = i + 1; j < n; ++j) {
                const double f = tab[ki - key[j]] * pw.phi(ui - u[j]);
                row += f;
                acc[j] -= f;
            }
            acc[i] += row;
        }
        const double v = grid_.vol * scale;
        for (std::size_t i = 0; i < n; ++i) out[i] += v * (acc[i] + 2.0 * kernel_.tail.values[i] * pw.phi(u[i]));
        if (kernel_.near_field != 0.0) add_local(pw, u, out, scale * kernel_.near_field);
    }

    void build_preconditioner() {
        const auto n = static_cast<Eigen::Index>(grid_.size());
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(stencil_.size() * 4);
        for (std::size_t f = 0; f < stencil_.size(); ++f) {
            const double c = stencil_.area[f] / stencil_.ell[f];
            const auto i = static_cast<Eigen::Index>(stencil_.a[f]);
            trip.emplace_back(i, i, c);
            if (stencil_.b[f] != LocalStencil::boundary) {
                const auto j = static_cast<Eigen::Index>(stencil_.b[f]);
                trip.emplace_back(j, j, c);
                trip.emplace_back(i, j, -c);
                trip.emplace_back(j, i, -c);
            }
        }
        stiff_.resize(n, n);
        stiff_.setFromTriplets(trip.begin(), trip.end());
        chol_ = std::make_shared<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>>(stiff_);
        if (chol_->info() != Eigen::Success) throw std::runtime_error("Operator: preconditioner factorisation failed");
    }

    void check(const Field& u) const {
        if (u.size() != grid_.size()) throw std::invalid_argument("Operator: field size mismatch");
    }

    Grid grid_;
    ModelParams mp_;
    KernelOptions opt_;
    LocalStencil stencil_;
    std::vector<double> inv_ell2_;
    KernelMatrix kernel_;
    Eigen::SparseMatrix<double> stiff_;
    std::shared_ptr<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>> chol_;
    mutable std::vector<double> buf_, gbuf_, wbuf_;
};

/// Free-function forms.
inline Field apply_operator(const Operator& op, const Field& u, OperatorMode mode) { return op.apply(u, mode); }
inline double form_A(const Operator& op, const Field& u, const Field& v) { return op.form(u, v); }

}  // namespace mlap
