#include "dla/parallel.hpp"

#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace dla {

namespace {

// Minimal persistent pool: N-1 sleeping workers, the calling thread takes the
// first chunk. No work stealing; chunks are fixed up front.
class Pool {
public:
    explicit Pool(int workers) : extra_(workers - 1) {
        threads_.reserve(static_cast<size_t>(extra_));
        for (int i = 0; i < extra_; ++i)
            threads_.emplace_back([this, i] { worker_loop(i); });
    }

    ~Pool() {
        {
            std::unique_lock<std::mutex> lk(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    void run(int64_t n, int64_t grain,
             const std::function<void(int64_t, int64_t)>& fn) {
        int parts = extra_ + 1;
        if (grain > 0) {
            const int64_t max_parts = (n + grain - 1) / grain;
            if (max_parts < parts) parts = static_cast<int>(max_parts);
        }
        if (parts <= 1) {
            fn(0, n);
            return;
        }
        const int64_t chunk = (n + parts - 1) / parts;
        {
            std::unique_lock<std::mutex> lk(mu_);
            fn_ = &fn;
            job_n_ = n;
            job_chunk_ = chunk;
            job_parts_ = parts;
            pending_ = parts - 1;
            ++generation_;
        }
        cv_.notify_all();
        fn(0, std::min<int64_t>(chunk, n));
        std::unique_lock<std::mutex> lk(mu_);
        done_cv_.wait(lk, [this] { return pending_ == 0; });
        fn_ = nullptr;
    }

private:
    void worker_loop(int id) {
        uint64_t seen = 0;
        for (;;) {
            const std::function<void(int64_t, int64_t)>* fn;
            int64_t begin, end;
            {
                std::unique_lock<std::mutex> lk(mu_);
                cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
                const int part = id + 1;
                if (part >= job_parts_) {
                    if (--pending_ == 0) done_cv_.notify_one();
                    continue;
                }
                fn = fn_;
                begin = std::min<int64_t>(part * job_chunk_, job_n_);
                end = std::min<int64_t>(begin + job_chunk_, job_n_);
            }
            if (begin < end) (*fn)(begin, end);
            {
                std::unique_lock<std::mutex> lk(mu_);
                if (--pending_ == 0) done_cv_.notify_one();
            }
        }
    }

    const int extra_;
    std::vector<std::thread> threads_;
    std::mutex mu_;
    std::condition_variable cv_, done_cv_;
    const std::function<void(int64_t, int64_t)>* fn_ = nullptr;
    int64_t job_n_ = 0, job_chunk_ = 0;
    int job_parts_ = 0;
    int pending_ = 0;
    uint64_t generation_ = 0;
    bool stop_ = false;
};

}  // namespace

int worker_count() {
    static const int n = [] {
        if (const char* env = std::getenv("DLA_THREADS")) {
            const int v = std::atoi(env);
            if (v >= 1) return v;
        }
        const unsigned hw = std::thread::hardware_concurrency();
        return hw == 0 ? 1 : static_cast<int>(hw);
    }();
    return n;
}

void parallel_for(int64_t n, int64_t grain,
                  const std::function<void(int64_t, int64_t)>& fn) {
    if (n <= 0) return;
    static Pool* pool = worker_count() > 1 ? new Pool(worker_count()) : nullptr;
    if (!pool || n <= grain) {
        fn(0, n);
        return;
    }
    // One dispatch at a time; concurrent callers (e.g. parallel folds) run
    // their job inline, which produces the same bits by construction.
    static std::mutex gate;
    std::unique_lock<std::mutex> lk(gate, std::try_to_lock);
    if (!lk.owns_lock()) {
        fn(0, n);
        return;
    }
    pool->run(n, grain, fn);
}

}  // namespace dla
