#pragma once

#include <mpfr.h>

#include <utility>

namespace kst::detail {

// Owning MPFR value with an explicit precision. Precision is never taken from
// a global default, so concurrent evaluations do not interfere.
class MpReal {
public:
    explicit MpReal(mpfr_prec_t bits) {
        mpfr_init2(v_, bits);
        mpfr_set_zero(v_, 1);
    }
    MpReal(mpfr_prec_t bits, double value) {
        mpfr_init2(v_, bits);
        mpfr_set_d(v_, value, MPFR_RNDN);
    }
    MpReal(const MpReal& other) {
        mpfr_init2(v_, mpfr_get_prec(other.v_));
        mpfr_set(v_, other.v_, MPFR_RNDN);
    }
    MpReal(MpReal&& other) noexcept {
        mpfr_init2(v_, mpfr_get_prec(other.v_));
        mpfr_swap(v_, other.v_);
    }
    MpReal& operator=(const MpReal& other) {
        if (this != &other) mpfr_set(v_, other.v_, MPFR_RNDN);
        return *this;
    }
    MpReal& operator=(MpReal&& other) noexcept {
        mpfr_swap(v_, other.v_);
        return *this;
    }
    ~MpReal() { mpfr_clear(v_); }

    mpfr_ptr get() noexcept { return v_; }
    mpfr_srcptr get() const noexcept { return v_; }
    double to_double() const { return mpfr_get_d(v_, MPFR_RNDN); }

private:
    mpfr_t v_;
};

inline mpfr_prec_t bits_for_digits(int digits) {
    return static_cast<mpfr_prec_t>(digits * 3.3219280948873626) + 16;
}

}  // namespace kst::detail
