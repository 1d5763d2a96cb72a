#pragma once

// Thin RAII layer over FFTW for 1D complex transforms of a fixed length.

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <memory>
#include <mutex>

namespace elastoscope::fft {

namespace detail {
// The FFTW planner is not re-entrant.
inline std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const noexcept { fftw_free(p); }
};
struct PlanDestroy {
  void operator()(fftw_plan p) const noexcept {
    std::lock_guard<std::mutex> lock(planner_mutex());
    fftw_destroy_plan(p);
  }
};
}  // namespace detail

/// fftw_malloc'd complex buffer, aligned as FFTW plans expect.
class ComplexBuffer {
 public:
  explicit ComplexBuffer(std::size_t n)
      : n_(n), data_(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n))) {
    if (!data_) throw std::bad_alloc();
  }
  std::size_t size() const noexcept { return n_; }
  fftw_complex* data() noexcept { return data_.get(); }
  std::complex<double>& operator[](std::size_t i) noexcept {
    return reinterpret_cast<std::complex<double>*>(data_.get())[i];
  }
  const std::complex<double>& operator[](std::size_t i) const noexcept {
    return reinterpret_cast<const std::complex<double>*>(data_.get())[i];
  }

 private:
  std::size_t n_;
  std::unique_ptr<fftw_complex, detail::FftwFree> data_;
};

/// Forward and backward unnormalized DFT plans of one length. execute() is
/// safe to call concurrently with distinct buffers.
class Plan1D {
 public:
  explicit Plan1D(std::size_t n) : n_(n) {
    ComplexBuffer a(n), b(n);
    std::lock_guard<std::mutex> lock(detail::planner_mutex());
    const int len = static_cast<int>(n);
    forward_.reset(fftw_plan_dft_1d(len, a.data(), b.data(), FFTW_FORWARD, FFTW_ESTIMATE));
    backward_.reset(fftw_plan_dft_1d(len, a.data(), b.data(), FFTW_BACKWARD, FFTW_ESTIMATE));
  }

  std::size_t size() const noexcept { return n_; }

  void forward(ComplexBuffer& in, ComplexBuffer& out) const {
    fftw_execute_dft(forward_.get(), in.data(), out.data());
  }
  void backward(ComplexBuffer& in, ComplexBuffer& out) const {
    fftw_execute_dft(backward_.get(), in.data(), out.data());
  }

 private:
  std::size_t n_;
  std::unique_ptr<std::remove_pointer_t<fftw_plan>, detail::PlanDestroy> forward_;
  std::unique_ptr<std::remove_pointer_t<fftw_plan>, detail::PlanDestroy> backward_;
};

}  // namespace elastoscope::fft
