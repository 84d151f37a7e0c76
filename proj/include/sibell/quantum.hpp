#pragma once

#include <array>
#include <complex>
#include <utility>

#include "sibell/core.hpp"

// Two-qubit kernel: the Bell singlet, its reduced density matrix, projective
// measurement in real rotation bases, Born-rule sampling, and the partner
// state obtained by projecting the singlet onto Alice's outcome.
namespace sibell {

using cdouble = std::complex<double>;

inline constexpr double kNormTol = 1e-9;      // state normalization
inline constexpr double kAlgebraTol = 1e-12;  // algebraic identities

struct QubitState {
    cdouble a0{0.0, 0.0};
    cdouble a1{0.0, 0.0};

    double norm() const;
};

struct TwoQubitState {
    // ordered |00>, |01>, |10>, |11>
    std::array<cdouble, 4> amp{};

    double norm() const;
};

struct DensityMatrix {
    // row-major 2x2
    std::array<std::array<cdouble, 2>, 2> m{};

    cdouble trace() const { return m[0][0] + m[1][1]; }
    bool is_hermitian(double tol = kNormTol) const;
};

// |Psi>_12 = (|0>|1> - |1>|0>)/sqrt(2)
TwoQubitState make_singlet();
TwoQubitState swap_qubits(const TwoQubitState& state);

// Partial trace over qubit 2; throws on non-normalized input.
DensityMatrix reduce_first(const TwoQubitState& state);

// Eigenstates of the rotation basis at `angle`, mapped to outcomes (+1, -1):
// e+ = cos t |0> + sin t |1>,  e- = -sin t |0> + cos t |1>.
std::pair<QubitState, QubitState> measurement_basis(double angle);

struct BornDraw {
    Outcome outcome = Outcome::plus;
    double p_plus = 0.0;
};

// p(+1) = <e+|rho|e+> (resp. |<e+|psi>|^2); outcome is +1 iff randomness < p(+1).
BornDraw born_sample(const DensityMatrix& rho, double angle, double randomness);
BornDraw born_sample(const QubitState& psi, double angle, double randomness);

// |phi>_2 = sqrt(2) <k|_1 |Psi>_12, renormalized; global phase fixed so the
// first nonzero amplitude is positive real.
QubitState partner_state(const TwoQubitState& bell, double alice_angle,
                         Outcome alice_outcome);

// Closed-form singlet correlator E = -cos 2(a-b); +cos 2(a-b) under the
// correlated-pairs convention (wing-B outcomes negated).
double exact_correlator(double angle_a, double angle_b, bool correlated_pairs = false);

// Direct two-qubit Born probability |<e_a(x) (x) e_b(y)|state>|^2. Computed by
// inner products, independent of the closed form above.
double joint_outcome_probability(const TwoQubitState& state, double angle_a,
                                 Outcome a, double angle_b, Outcome b);

double inner_product_abs(const QubitState& a, const QubitState& b);

}  // namespace sibell
