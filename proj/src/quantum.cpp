#include "sibell/quantum.hpp"

#include <cmath>
#include <stdexcept>

namespace sibell {

double QubitState::norm() const { return std::sqrt(std::norm(a0) + std::norm(a1)); }

double TwoQubitState::norm() const {
    double s = 0.0;
    for (const auto& a : amp) s += std::norm(a);
    return std::sqrt(s);
}

bool DensityMatrix::is_hermitian(double tol) const {
    return std::abs(m[0][0].imag()) <= tol && std::abs(m[1][1].imag()) <= tol &&
           std::abs(m[0][1] - std::conj(m[1][0])) <= tol;
}

TwoQubitState make_singlet() {
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    TwoQubitState s;
    s.amp = {cdouble{0.0, 0.0}, cdouble{inv_sqrt2, 0.0}, cdouble{-inv_sqrt2, 0.0},
             cdouble{0.0, 0.0}};
    return s;
}

TwoQubitState swap_qubits(const TwoQubitState& state) {
    TwoQubitState out = state;
    std::swap(out.amp[1], out.amp[2]);
    return out;
}

DensityMatrix reduce_first(const TwoQubitState& state) {
    if (std::abs(state.norm() - 1.0) > kNormTol) {
        throw std::invalid_argument("reduce_first requires a unit-norm state");
    }
    DensityMatrix rho;
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            cdouble sum{0.0, 0.0};
            for (int k = 0; k < 2; ++k) {
                sum += state.amp[2 * i + k] * std::conj(state.amp[2 * j + k]);
            }
            rho.m[i][j] = sum;
        }
    }
    return rho;
}

std::pair<QubitState, QubitState> measurement_basis(double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    QubitState plus{cdouble{c, 0.0}, cdouble{s, 0.0}};
    QubitState minus{cdouble{-s, 0.0}, cdouble{c, 0.0}};
    return {plus, minus};
}

namespace {

void check_randomness(double u) {
    if (!(u >= 0.0 && u < 1.0)) {
        throw std::invalid_argument("randomness must lie in [0, 1)");
    }
}

BornDraw draw_from_p(double p_plus, double u) {
    // clamp tiny negative round-off
    if (p_plus < 0.0 && p_plus > -kAlgebraTol) p_plus = 0.0;
    if (p_plus > 1.0 && p_plus < 1.0 + kAlgebraTol) p_plus = 1.0;
    if (p_plus < 0.0 || p_plus > 1.0) {
        throw std::invalid_argument("Born probability outside [0, 1]");
    }
    return BornDraw{u < p_plus ? Outcome::plus : Outcome::minus, p_plus};
}

}  // namespace

BornDraw born_sample(const DensityMatrix& rho, double angle, double randomness) {
    check_randomness(randomness);
    if (std::abs(rho.trace() - cdouble{1.0, 0.0}) > kNormTol || !rho.is_hermitian()) {
        throw std::invalid_argument("density matrix must be Hermitian with unit trace");
    }
    const auto [eplus, eminus] = measurement_basis(angle);
    // <e+|rho|e+>
    cdouble p{0.0, 0.0};
    const cdouble e[2] = {eplus.a0, eplus.a1};
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            p += std::conj(e[i]) * rho.m[i][j] * e[j];
        }
    }
    return draw_from_p(p.real(), randomness);
}

BornDraw born_sample(const QubitState& psi, double angle, double randomness) {
    check_randomness(randomness);
    if (std::abs(psi.norm() - 1.0) > kNormTol) {
        throw std::invalid_argument("qubit state must be unit norm");
    }
    const auto [eplus, eminus] = measurement_basis(angle);
    const cdouble overlap = std::conj(eplus.a0) * psi.a0 + std::conj(eplus.a1) * psi.a1;
    return draw_from_p(std::norm(overlap), randomness);
}

QubitState partner_state(const TwoQubitState& bell, double alice_angle,
                         Outcome alice_outcome) {
    const auto [eplus, eminus] = measurement_basis(alice_angle);
    const QubitState& k = alice_outcome == Outcome::plus ? eplus : eminus;
    // phi_j = sqrt(2) * sum_i conj(k_i) * bell[2i + j]
    const double sqrt2 = std::sqrt(2.0);
    QubitState phi;
    phi.a0 = sqrt2 * (std::conj(k.a0) * bell.amp[0] + std::conj(k.a1) * bell.amp[2]);
    phi.a1 = sqrt2 * (std::conj(k.a0) * bell.amp[1] + std::conj(k.a1) * bell.amp[3]);
    const double n = phi.norm();
    if (n < kNormTol) {
        throw std::invalid_argument("partner projection has zero norm");
    }
    phi.a0 /= n;
    phi.a1 /= n;
    // global phase: first nonzero amplitude positive real
    cdouble lead = std::abs(phi.a0) > kNormTol ? phi.a0 : phi.a1;
    cdouble phase = lead / std::abs(lead);
    phi.a0 /= phase;
    phi.a1 /= phase;
    if (std::abs(phi.a0.real()) < kAlgebraTol && std::abs(phi.a0.imag()) < kAlgebraTol) {
        phi.a0 = cdouble{0.0, 0.0};
    }
    return phi;
}

double exact_correlator(double angle_a, double angle_b, bool correlated_pairs) {
    const double e = -std::cos(2.0 * (angle_a - angle_b));
    return correlated_pairs ? -e : e;
}

double joint_outcome_probability(const TwoQubitState& state, double angle_a,
                                 Outcome a, double angle_b, Outcome b) {
    const auto [aplus, aminus] = measurement_basis(angle_a);
    const auto [bplus, bminus] = measurement_basis(angle_b);
    const QubitState& ea = a == Outcome::plus ? aplus : aminus;
    const QubitState& eb = b == Outcome::plus ? bplus : bminus;
    // <ea (x) eb | state>
    cdouble overlap{0.0, 0.0};
    const cdouble av[2] = {ea.a0, ea.a1};
    const cdouble bv[2] = {eb.a0, eb.a1};
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            overlap += std::conj(av[i] * bv[j]) * state.amp[2 * i + j];
        }
    }
    return std::norm(overlap);
}

double inner_product_abs(const QubitState& a, const QubitState& b) {
    return std::abs(std::conj(a.a0) * b.a0 + std::conj(a.a1) * b.a1);
}

}  // namespace sibell
