#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "pam/errors.hpp"
#include "pam/lattice.hpp"
#include "pam/rng.hpp"

namespace pam {

/// Dirichlet eigenpair of H = Delta + V on a finite domain; phi is indexed
/// like the domain's sites and has unit l2 norm.
struct EigenPair {
    double lambda = 0;
    std::vector<double> phi;
    double residual = 0;
    long iterations = 0;
};

struct SpectralOptions {
    double tol = 1e-10;          // residual ||H phi - lambda phi||_2
    long max_iter = 100000;      // operator applications
    std::size_t krylov_dim = 120; // basis size per Lanczos cycle
};

/// (Delta + V) phi with phi = 0 outside the domain:
/// out(z) = sum_{|y-z|=1, y in domain} phi(y) - 2d phi(z) + V(z) phi(z).
inline void apply_hamiltonian(const LatticeDomain& domain, std::span<const double> V, std::span<const double> phi,
                              std::span<double> out) {
    const int deg = domain.degree();
    for (std::size_t i = 0; i < domain.size(); ++i) {
        double acc = (V[i] - deg) * phi[i];
        for (int j = 0; j < deg; ++j) {
            const long n = domain.neighbor(i, j);
            if (n >= 0) acc += phi[static_cast<std::size_t>(n)];
        }
        out[i] = acc;
    }
}

inline std::vector<double> apply_hamiltonian(const LatticeDomain& domain, std::span<const double> V,
                                             std::span<const double> phi) {
    std::vector<double> out(domain.size());
    apply_hamiltonian(domain, V, phi, out);
    return out;
}

inline double eigen_residual(const LatticeDomain& domain, std::span<const double> V, const EigenPair& p) {
    const auto h = apply_hamiltonian(domain, V, p.phi);
    double s = 0;
    for (std::size_t i = 0; i < h.size(); ++i) s += (h[i] - p.lambda * p.phi[i]) * (h[i] - p.lambda * p.phi[i]);
    return std::sqrt(s);
}

/// Dense symmetric matrix of H on the domain (test oracle and small solves).
inline Eigen::MatrixXd assemble_dense(const LatticeDomain& domain, std::span<const double> V) {
    const auto n = static_cast<Eigen::Index>(domain.size());
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        H(i, i) = V[static_cast<std::size_t>(i)] - domain.degree();
        for (int j = 0; j < domain.degree(); ++j) {
            const long nb = domain.neighbor(static_cast<std::size_t>(i), j);
            if (nb >= 0) H(i, nb) = 1.0;
        }
    }
    return H;
}

struct DenseSpectrum {
    std::vector<double> values;  // non-increasing
    Eigen::MatrixXd vectors;     // column k belongs to values[k]
};

inline constexpr std::size_t kDefaultDenseCap = 2000;

inline DenseSpectrum dense_oracle(const LatticeDomain& domain, std::span<const double> V,
                                  std::size_t cap = kDefaultDenseCap) {
    require(!domain.empty(), ErrorKind::InvalidParameter, "empty domain");
    require(domain.size() <= cap, ErrorKind::Resource,
            "dense solve of " + std::to_string(domain.size()) + " sites exceeds cap " + std::to_string(cap));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(assemble_dense(domain, V));
    require(es.info() == Eigen::Success, ErrorKind::Convergence, "dense symmetric eigensolver failed");
    const auto n = static_cast<Eigen::Index>(domain.size());
    DenseSpectrum out;
    out.values.resize(domain.size());
    out.vectors.resize(n, n);
    for (Eigen::Index k = 0; k < n; ++k) {
        out.values[static_cast<std::size_t>(k)] = es.eigenvalues()(n - 1 - k);
        out.vectors.col(k) = es.eigenvectors().col(n - 1 - k);
    }
    return out;
}

namespace detail {

/// Lanczos with full reorthogonalisation and locking on one connected domain.
class LanczosSolver {
public:
    LanczosSolver(const LatticeDomain& domain, std::span<const double> V, const SpectralOptions& opts)
        : domain_(domain), V_(V), opts_(opts), n_(static_cast<Eigen::Index>(domain.size())) {
        double vmax = 0;
        for (double v : V) vmax = std::max(vmax, std::abs(v));
        scale_ = vmax + 2.0 * domain.degree() + 1.0;
    }

    /// Top-k eigenpairs. With `generic = false` the first cycle starts from the
    /// indicator of argmax V and no verification cycle is run (k = 1 on a
    /// connected domain is then exact by positivity of the ground state).
    std::vector<EigenPair> solve(std::size_t k, bool generic) {
        k = std::min<std::size_t>(k, domain_.size());
        Eigen::VectorXd start = argmax_indicator();
        if (generic) start += 1e-3 * random_vector();
        while (static_cast<Eigen::Index>(locked_.size()) < n_) {
            const bool have_k = locked_.size() >= k;
            if (have_k && !generic) break;
            const auto before = locked_.size();
            const Cycle c = run_cycle(start);
            if (have_k && c.converged.front()) {
                // Verification: the complement's top pair must not beat the k-th locked value.
                std::vector<double> vals = locked_values();
                std::sort(vals.rbegin(), vals.rend());
                if (c.values.front() <= vals[k - 1] + opts_.tol) break;
            }
            lock_converged(c, have_k ? locked_.size() + 1 : k);
            if (locked_.size() == before) {
                start = c.vectors.col(0) + 1e-4 * random_vector();
            } else if (c.invariant || locked_.size() >= k) {
                start = random_vector();
            } else {
                std::size_t first_free = 0;
                while (first_free < c.converged.size() && c.converged[first_free]) ++first_free;
                if (first_free >= static_cast<std::size_t>(c.vectors.cols())) first_free = 0;
                start = c.vectors.col(static_cast<Eigen::Index>(first_free)) + 1e-4 * random_vector();
            }
            if (iterations_ > opts_.max_iter)
                throw ConvergenceError("Lanczos did not converge within " + std::to_string(opts_.max_iter) +
                                           " operator applications",
                                       best_residual_);
        }
        std::vector<std::size_t> order(locked_.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return locked_[a].lambda > locked_[b].lambda; });
        std::vector<EigenPair> out;
        for (std::size_t i = 0; i < std::min(k, order.size()); ++i) {
            EigenPair p = locked_[order[i]];
            p.iterations = iterations_;
            out.push_back(std::move(p));
        }
        return out;
    }

private:
    struct Cycle {
        std::vector<double> values;  // non-increasing Ritz values
        Eigen::MatrixXd vectors;
        std::vector<double> residuals;
        std::vector<bool> converged;
        bool invariant = false;
    };

    Eigen::VectorXd apply(const Eigen::VectorXd& x) {
        Eigen::VectorXd y(n_);
        apply_hamiltonian(domain_, V_, std::span<const double>(x.data(), static_cast<std::size_t>(n_)),
                          std::span<double>(y.data(), static_cast<std::size_t>(n_)));
        ++iterations_;
        return y;
    }

    Eigen::VectorXd argmax_indicator() const {
        std::size_t best = 0;
        for (std::size_t i = 1; i < domain_.size(); ++i) {
            if (V_[i] > V_[best] || (V_[i] == V_[best] && domain_.site(i) < domain_.site(best))) best = i;
        }
        Eigen::VectorXd e = Eigen::VectorXd::Zero(n_);
        e(static_cast<Eigen::Index>(best)) = 1.0;
        return e;
    }

    Eigen::VectorXd random_vector() {
        Philox rng(stream_tag("lanczos-start"), random_draws_++);
        Eigen::VectorXd r(n_);
        for (Eigen::Index i = 0; i < n_; ++i) r(i) = rng.uniform() - 0.5;
        return r / r.norm();
    }

    void orthogonalize_locked(Eigen::VectorXd& w) const {
        for (const auto& p : locked_) {
            const Eigen::Map<const Eigen::VectorXd> q(p.phi.data(), n_);
            w -= q.dot(w) * q;
        }
    }

    Cycle run_cycle(Eigen::VectorXd start) {
        const auto remaining = n_ - static_cast<Eigen::Index>(locked_.size());
        const Eigen::Index m = std::min<Eigen::Index>(remaining, static_cast<Eigen::Index>(opts_.krylov_dim));
        Eigen::MatrixXd Q(n_, m);
        std::vector<double> alpha, beta;
        for (int pass = 0; pass < 2; ++pass) orthogonalize_locked(start);
        double nrm = start.norm();
        if (nrm < 1e-300) {
            start = random_vector();
            for (int pass = 0; pass < 2; ++pass) orthogonalize_locked(start);
            nrm = start.norm();
        }
        Q.col(0) = start / nrm;
        Eigen::Index steps = 0;
        bool invariant = false;
        for (Eigen::Index j = 0; j < m; ++j) {
            Eigen::VectorXd w = apply(Q.col(j));
            const double a = Q.col(j).dot(w);
            alpha.push_back(a);
            ++steps;
            for (int pass = 0; pass < 2; ++pass) {
                w -= Q.leftCols(j + 1) * (Q.leftCols(j + 1).transpose() * w);
                orthogonalize_locked(w);
            }
            const double b = w.norm();
            if (j + 1 == m) break;
            if (b < 1e-12 * scale_) {
                invariant = true;
                break;
            }
            beta.push_back(b);
            Q.col(j + 1) = w / b;
        }
        if (steps == remaining) invariant = true;

        // The full solver scales the matrix first; the tridiagonal entry point
        // does not and can stall on badly scaled Lanczos matrices.
        Eigen::MatrixXd T = Eigen::MatrixXd::Zero(steps, steps);
        for (Eigen::Index i = 0; i < steps; ++i) {
            T(i, i) = alpha[static_cast<std::size_t>(i)];
            if (i + 1 < steps) T(i, i + 1) = T(i + 1, i) = beta[static_cast<std::size_t>(i)];
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> tri(T);
        require(tri.info() == Eigen::Success, ErrorKind::Convergence, "tridiagonal eigensolver failed");

        Cycle c;
        c.invariant = invariant;
        c.vectors.resize(n_, steps);
        for (Eigen::Index i = 0; i < steps; ++i) {
            const Eigen::Index src = steps - 1 - i;
            c.values.push_back(tri.eigenvalues()(src));
            Eigen::VectorXd y = Q.leftCols(steps) * tri.eigenvectors().col(src);
            y /= y.norm();
            c.vectors.col(i) = y;
        }
        // Exact residuals for the leading Ritz pairs; the rest are marked unconverged.
        const Eigen::Index check = invariant ? steps : std::min<Eigen::Index>(steps, 8);
        c.residuals.assign(static_cast<std::size_t>(steps), std::numeric_limits<double>::infinity());
        c.converged.assign(static_cast<std::size_t>(steps), false);
        for (Eigen::Index i = 0; i < check; ++i) {
            const Eigen::VectorXd r = apply(c.vectors.col(i)) - c.values[static_cast<std::size_t>(i)] * c.vectors.col(i);
            const double res = r.norm();
            c.residuals[static_cast<std::size_t>(i)] = res;
            c.converged[static_cast<std::size_t>(i)] = res <= opts_.tol;
            best_residual_ = std::min(best_residual_, res);
        }
        return c;
    }

    void lock(const Cycle& c, Eigen::Index i) {
        EigenPair p;
        p.lambda = c.values[static_cast<std::size_t>(i)];
        p.phi.assign(c.vectors.col(i).data(), c.vectors.col(i).data() + n_);
        p.residual = c.residuals[static_cast<std::size_t>(i)];
        locked_.push_back(std::move(p));
    }

    void lock_converged(const Cycle& c, std::size_t limit) {
        if (c.invariant) {
            for (Eigen::Index i = 0; i < c.vectors.cols(); ++i)
                if (c.converged[static_cast<std::size_t>(i)]) lock(c, i);
            return;
        }
        for (Eigen::Index i = 0; i < c.vectors.cols() && locked_.size() < limit; ++i) {
            if (!c.converged[static_cast<std::size_t>(i)]) break;
            lock(c, i);
        }
    }

    std::vector<double> locked_values() const {
        std::vector<double> v;
        for (const auto& p : locked_) v.push_back(p.lambda);
        return v;
    }

    const LatticeDomain& domain_;
    std::span<const double> V_;
    SpectralOptions opts_;
    Eigen::Index n_;
    double scale_ = 1;
    long iterations_ = 0;
    std::uint64_t random_draws_ = 0;
    double best_residual_ = std::numeric_limits<double>::infinity();
    std::vector<EigenPair> locked_;
};

inline EigenPair embed(const EigenPair& local, const std::vector<std::size_t>& indices, std::size_t n) {
    EigenPair p = local;
    p.phi.assign(n, 0.0);
    for (std::size_t i = 0; i < indices.size(); ++i) p.phi[indices[i]] = local.phi[i];
    return p;
}

inline std::vector<double> gather(std::span<const double> V, const std::vector<std::size_t>& indices) {
    std::vector<double> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(V[i]);
    return out;
}

} // namespace detail

/// k largest Dirichlet eigenpairs, non-increasing, with orthonormal eigenvectors.
/// The operator is block diagonal over connected components, each solved separately.
inline std::vector<EigenPair> top_k_eigs(const LatticeDomain& domain, std::span<const double> V, std::size_t k,
                                         const SpectralOptions& opts = {}) {
    require(!domain.empty(), ErrorKind::InvalidParameter, "empty domain");
    require(V.size() == domain.size(), ErrorKind::InvalidParameter, "potential size does not match domain");
    require(k >= 1 && k <= domain.size(), ErrorKind::InvalidParameter,
            "k = " + std::to_string(k) + " must be in [1, |domain| = " + std::to_string(domain.size()) + "]");
    const auto comps = domain.components();
    std::vector<EigenPair> all;
    long iterations = 0;
    for (const auto& comp : comps) {
        const LatticeDomain sub = comps.size() == 1 ? LatticeDomain{} : domain.subdomain(comp);
        const LatticeDomain& dom = comps.size() == 1 ? domain : sub;
        const std::vector<double> Vc = comps.size() == 1 ? std::vector<double>(V.begin(), V.end()) : detail::gather(V, comp);
        detail::LanczosSolver solver(dom, Vc, opts);
        auto pairs = solver.solve(std::min(k, comp.size()), k > 1);
        for (auto& p : pairs) {
            iterations += p.iterations;
            all.push_back(comps.size() == 1 ? std::move(p) : detail::embed(p, comp, domain.size()));
        }
    }
    std::stable_sort(all.begin(), all.end(), [](const EigenPair& a, const EigenPair& b) { return a.lambda > b.lambda; });
    all.resize(k);
    for (auto& p : all) {
        p.iterations = iterations;
        p.residual = eigen_residual(domain, V, p);
    }
    return all;
}

/// Principal Dirichlet eigenpair with a non-negative eigenfunction.
inline EigenPair principal_eig(const LatticeDomain& domain, std::span<const double> V, const SpectralOptions& opts = {}) {
    require(!domain.empty(), ErrorKind::InvalidParameter, "empty domain");
    require(V.size() == domain.size(), ErrorKind::InvalidParameter, "potential size does not match domain");
    if (domain.size() == 1) return EigenPair{V[0] - domain.degree(), {1.0}, 0.0, 0};
    const auto comps = domain.components();
    EigenPair best;
    bool have = false;
    long iterations = 0;
    for (const auto& comp : comps) {
        EigenPair p;
        if (comp.size() == 1) {
            p = EigenPair{V[comp[0]] - domain.degree(), {1.0}, 0.0, 0};
        } else if (comps.size() == 1) {
            detail::LanczosSolver solver(domain, V, opts);
            p = solver.solve(1, false).front();
        } else {
            const LatticeDomain sub = domain.subdomain(comp);
            const auto Vc = detail::gather(V, comp);
            detail::LanczosSolver solver(sub, Vc, opts);
            p = solver.solve(1, false).front();
        }
        iterations += p.iterations;
        if (!have || p.lambda > best.lambda) {
            best = comps.size() == 1 ? std::move(p) : detail::embed(p, comp, domain.size());
            have = true;
        }
    }
    // The ground state of a connected block is positive; flip the Lanczos sign
    // convention and drop round-off of the wrong sign.
    double nrm = 0;
    for (double& x : best.phi) {
        x = std::abs(x);
        nrm += x * x;
    }
    nrm = std::sqrt(nrm);
    for (double& x : best.phi) x /= nrm;
    best.iterations = iterations;
    best.residual = eigen_residual(domain, V, best);
    if (best.residual > opts.tol) throw ConvergenceError("principal eigenpair residual above tolerance", best.residual);
    return best;
}

/// CSV rows `x0,...,phi` for plotting.
inline void write_eigenpair_csv(std::ostream& os, const LatticeDomain& domain, const EigenPair& p) {
    const auto prec = os.precision(17);
    for (int i = 0; i < domain.dim(); ++i) os << "x" << i << ",";
    os << "phi\n";
    for (std::size_t s = 0; s < domain.size(); ++s) {
        for (int i = 0; i < domain.dim(); ++i) os << domain.site(s)[i] << ",";
        os << p.phi[s] << "\n";
    }
    os.precision(prec);
}

} // namespace pam
