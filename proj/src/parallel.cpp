#include "cect/parallel.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>

namespace cect {

int worker_count() {
    static const int n = [] {
        if (const char* env = std::getenv("CECT_FORGE_THREADS")) {
            int v = std::atoi(env);
            if (v >= 1) return v;
        }
        unsigned hw = std::thread::hardware_concurrency();
        return hw ? static_cast<int>(hw) : 1;
    }();
    return n;
}

namespace {

// Persistent pool; workers sleep on a condition variable between jobs.
class Pool {
public:
    explicit Pool(int workers) : job_fn_(nullptr) {
        for (int i = 1; i < workers; ++i) {
            std::thread t([this, i] { worker_loop(i); });
            t.detach();
        }
        nworkers_ = workers;
    }

    void run(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
        if (n <= 0) return;
        int parts = static_cast<int>(std::min<int64_t>(nworkers_, n));
        if (parts == 1) {
            fn(0, n);
            return;
        }
        {
            std::unique_lock<std::mutex> lk(mtx_);
            job_fn_ = &fn;
            job_n_ = n;
            job_parts_ = parts;
            remaining_ = parts - 1; // part 0 runs on the calling thread
            ++generation_;
        }
        cv_start_.notify_all();
        run_part(0, n, parts, fn);
        std::unique_lock<std::mutex> lk(mtx_);
        cv_done_.wait(lk, [this] { return remaining_ == 0; });
        job_fn_ = nullptr;
    }

private:
    static void run_part(int part, int64_t n, int parts,
                         const std::function<void(int64_t, int64_t)>& fn) {
        int64_t chunk = (n + parts - 1) / parts;
        int64_t lo = part * chunk;
        int64_t hi = std::min<int64_t>(n, lo + chunk);
        if (lo < hi) fn(lo, hi);
    }

    void worker_loop(int index) {
        uint64_t seen = 0;
        for (;;) {
            const std::function<void(int64_t, int64_t)>* fn = nullptr;
            int64_t n = 0;
            int parts = 0;
            {
                std::unique_lock<std::mutex> lk(mtx_);
                cv_start_.wait(lk, [&] { return generation_ != seen; });
                seen = generation_;
                fn = job_fn_;
                n = job_n_;
                parts = job_parts_;
            }
            if (fn && index < parts) run_part(index, n, parts, *fn);
            {
                std::unique_lock<std::mutex> lk(mtx_);
                if (index < parts && --remaining_ == 0) cv_done_.notify_one();
            }
        }
    }

    int nworkers_ = 1;
    std::mutex mtx_;
    std::condition_variable cv_start_, cv_done_;
    const std::function<void(int64_t, int64_t)>* job_fn_;
    int64_t job_n_ = 0;
    int job_parts_ = 0;
    int remaining_ = 0;
    uint64_t generation_ = 0;
};

} // namespace

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& range_fn) {
    // Leaked on purpose: detached workers may still be parked in the pool at exit.
    static Pool* pool = new Pool(worker_count());
    pool->run(n, range_fn);
}

} // namespace cect
