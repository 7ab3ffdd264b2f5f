#include "abn/gemm.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace abn {

namespace {

std::atomic<unsigned> g_threads{0};

unsigned resolve_threads() {
    unsigned t = g_threads.load();
    if (t == 0) {
        unsigned hw = std::thread::hardware_concurrency();
        t = std::clamp(hw, 1u, 4u);
        g_threads.store(t);
    }
    return t;
}

// Splits [0,m) into contiguous row blocks, one per worker. Each block is
// computed independently, so the result does not depend on scheduling.
template <typename Fn>
void parallel_rows(std::size_t m, std::size_t work_per_row, Fn&& fn) {
    unsigned nt = resolve_threads();
    if (nt <= 1 || m < 2 || m * work_per_row < (1u << 18)) {
        fn(0, m);
        return;
    }
    nt = static_cast<unsigned>(std::min<std::size_t>(nt, m));
    std::vector<std::thread> workers;
    workers.reserve(nt);
    std::size_t chunk = (m + nt - 1) / nt;
    for (unsigned t = 0; t < nt; ++t) {
        std::size_t lo = t * chunk;
        std::size_t hi = std::min(m, lo + chunk);
        if (lo >= hi) break;
        workers.emplace_back([&fn, lo, hi] { fn(lo, hi); });
    }
    for (auto& w : workers) w.join();
}

}  // namespace

void set_gemm_threads(unsigned n) {
    g_threads.store(n == 0 ? 1 : n);
}

unsigned gemm_threads() {
    return resolve_threads();
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k,
             const double* a, std::size_t lda,
             const double* b, std::size_t ldb,
             double* c, std::size_t ldc) {
    parallel_rows(m, n * k, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            double* ci = c + i * ldc;
            const double* ai = a + i * lda;
            std::size_t p = 0;
            // two-way unroll over the inner dimension keeps a fixed
            // left-to-right accumulation order per output element
            for (; p + 1 < k; p += 2) {
                double a0 = ai[p];
                double a1 = ai[p + 1];
                const double* b0 = b + p * ldb;
                const double* b1 = b0 + ldb;
                for (std::size_t j = 0; j < n; ++j) ci[j] += a0 * b0[j] + a1 * b1[j];
            }
            for (; p < k; ++p) {
                double a0 = ai[p];
                const double* b0 = b + p * ldb;
                for (std::size_t j = 0; j < n; ++j) ci[j] += a0 * b0[j];
            }
        }
    });
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k,
             const double* a, std::size_t lda,
             const double* b, std::size_t ldb,
             double* c, std::size_t ldc) {
    parallel_rows(m, n * k, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const double* ai = a + i * lda;
            double* ci = c + i * ldc;
            for (std::size_t j = 0; j < n; ++j) {
                const double* bj = b + j * ldb;
                // four interleaved partial sums; the reduction order is fixed
                // by the source, so results stay bitwise reproducible
                double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
                std::size_t p = 0;
                for (; p + 3 < k; p += 4) {
                    acc0 += ai[p] * bj[p];
                    acc1 += ai[p + 1] * bj[p + 1];
                    acc2 += ai[p + 2] * bj[p + 2];
                    acc3 += ai[p + 3] * bj[p + 3];
                }
                double acc = (acc0 + acc1) + (acc2 + acc3);
                for (; p < k; ++p) acc += ai[p] * bj[p];
                ci[j] += acc;
            }
        }
    });
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k,
             const double* a, std::size_t lda,
             const double* b, std::size_t ldb,
             double* c, std::size_t ldc) {
    parallel_rows(m, n * k, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t p = 0; p < k; ++p) {
            const double* ap = a + p * lda;
            const double* bp = b + p * ldb;
            for (std::size_t i = lo; i < hi; ++i) {
                double ai = ap[i];
                if (ai == 0.0) continue;
                double* ci = c + i * ldc;
                for (std::size_t j = 0; j < n; ++j) ci[j] += ai * bp[j];
            }
        }
    });
}

}  // namespace abn
