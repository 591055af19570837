// Serial reference kernels vs the OpenMP kernels, plus one encoder forward
// pass through the dispatcher at several thread caps. Every OpenMP result is
// checked bitwise against the serial one before its time is reported.
#include <algorithm>
#include <chrono>
#include <cstring>
#include <functional>
#include <iomanip>
#include <iostream>
#include <vector>

#include "CLI11.hpp"
#include "peftlab/encoder.hpp"
#include "peftlab/kernels.hpp"
#include "peftlab/rng.hpp"

using namespace peftlab;

namespace {

double best_of(int reps, const std::function<void()>& f) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

bool same(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

std::vector<double> random_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

void row(const std::string& name, double serial_ms, double omp_ms, int threads, bool identical) {
  std::cout << std::left << std::setw(26) << name << std::right << std::fixed << std::setprecision(3)
            << std::setw(11) << serial_ms << std::setw(11) << omp_ms << std::setw(9) << threads << std::setw(9)
            << std::setprecision(2) << serial_ms / omp_ms << std::setw(11) << (identical ? "yes" : "NO") << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"serial vs OpenMP kernel benchmark"};
  std::vector<int> threads = {1, 2, 4};
  int reps = 5;
  bool quick = false;
  cli.add_option("--threads", threads, "thread caps to compare");
  cli.add_option("--reps", reps, "repetitions (best time is reported)")->check(CLI::PositiveNumber);
  cli.add_flag("--quick", quick, "small sizes, for a smoke run");
  CLI11_PARSE(cli, argc, argv);

  std::cout << "OpenMP " << (kernels::openmp_enabled() ? "enabled" : "disabled") << ", runtime default "
            << kernels::max_threads() << " thread(s)\n\n";
  std::cout << std::left << std::setw(26) << "kernel" << std::right << std::setw(11) << "serial ms" << std::setw(11)
            << "omp ms" << std::setw(9) << "threads" << std::setw(9) << "speedup" << std::setw(11) << "bitwise"
            << "\n";

  Rng rng(1);
  bool all_identical = true;
  const std::vector<std::size_t> sizes = quick ? std::vector<std::size_t>{32, 64} : std::vector<std::size_t>{64, 128, 256};
  for (const std::size_t n : sizes) {
    const auto a = random_vec(n * n, rng), b = random_vec(n * n, rng);
    std::vector<double> s(n * n), o(n * n);
    const std::string dims = std::to_string(n) + "^3";
    const double gemm_serial = best_of(reps, [&] { kernels::serial::gemm_nn(a, b, s, n, n, n, false); });
    const double nt_serial = best_of(reps, [&] { kernels::serial::gemm_nt(a, b, s, n, n, n, false); });
    const double tn_serial = best_of(reps, [&] { kernels::serial::gemm_tn(a, b, s, n, n, n, false); });
    const double sm_serial = best_of(reps, [&] { kernels::serial::softmax_rows(a, s, n, n); });
    for (const int t : threads) {
      kernels::set_max_threads(t);
      auto compare = [&](const std::string& name, double serial_ms, const std::function<void()>& serial_run,
                         const std::function<void()>& omp_run) {
        serial_run();
        const double ms = best_of(reps, omp_run);
        const bool ok = same(s, o);
        all_identical &= ok;
        row(name, serial_ms, ms, t, ok);
      };
      compare("gemm_nn " + dims, gemm_serial, [&] { kernels::serial::gemm_nn(a, b, s, n, n, n, false); },
              [&] { kernels::omp::gemm_nn(a, b, o, n, n, n, false); });
      compare("gemm_nt " + dims, nt_serial, [&] { kernels::serial::gemm_nt(a, b, s, n, n, n, false); },
              [&] { kernels::omp::gemm_nt(a, b, o, n, n, n, false); });
      compare("gemm_tn " + dims, tn_serial, [&] { kernels::serial::gemm_tn(a, b, s, n, n, n, false); },
              [&] { kernels::omp::gemm_tn(a, b, o, n, n, n, false); });
      compare("softmax " + std::to_string(n) + "x" + std::to_string(n), sm_serial,
              [&] { kernels::serial::softmax_rows(a, s, n, n); }, [&] { kernels::omp::softmax_rows(a, o, n, n); });
    }
  }

  // Whole encoder forward through the dispatching kernels.
  model::EncoderConfig cfg;
  if (quick) {
    cfg.n_layers = 1;
    cfg.d_model = 32;
    cfg.d_ff = 64;
  }
  cfg.vocab_size = 500;
  cfg.dropout_rate = 0.0;
  const model::EncoderModel enc(cfg, 3);
  std::vector<int> ids(quick ? 32 : 128);
  for (auto& id : ids) id = static_cast<int>(5 + rng.below(495));
  kernels::set_max_threads(1);
  std::vector<double> reference;
  const double fwd_serial = best_of(reps, [&] {
    const auto h = enc.forward(ids).hidden;
    reference.assign(h.data().begin(), h.data().end());
  });
  for (const int t : threads) {
    kernels::set_max_threads(t);
    std::vector<double> got;
    const double ms = best_of(reps, [&] {
      const auto h = enc.forward(ids).hidden;
      got.assign(h.data().begin(), h.data().end());
    });
    const bool ok = same(reference, got);
    all_identical &= ok;
    row("encoder forward " + std::to_string(ids.size()) + " tok", fwd_serial, ms, t, ok);
  }
  kernels::set_max_threads(0);

  std::cout << "\n" << (all_identical ? "all OpenMP results bitwise identical to serial" : "MISMATCH between serial and OpenMP") << "\n";
  return all_identical ? 0 : 1;
}
