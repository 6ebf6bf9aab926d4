#pragma once

#include "kst/qfi.hpp"

#include <optional>
#include <string>

namespace kst {

enum class BoundFamily { legendre, sub_qfi, taylor, krylov };

struct BoundValue {
    double value = 0.0;
    BoundFamily family = BoundFamily::legendre;
    std::optional<int> order;
};

std::string bound_label(const BoundValue& b);  // "Leg", "Sub", "Tay3", "Kry1"

enum class TaylorRoute { spectral, doubled };

inline constexpr int kMaxDoubledQubits = 6;

BoundValue legendre_bound(double f_ghz, int n_qubits);
BoundValue sub_qfi_bound(const DensityMatrix& rho, const Observable& H);
BoundValue sub_qfi_bound(const SpectralContext& ctx);
BoundValue taylor_bound(const DensityMatrix& rho, const Observable& H, int n,
                        TaylorRoute route = TaylorRoute::spectral);
BoundValue taylor_bound(const SpectralContext& ctx, int n);
double relative_error(const BoundValue& b, double f_q);
double relative_error(double b, double f_q);

}  // namespace kst
