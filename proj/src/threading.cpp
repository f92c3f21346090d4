#include "dyadit/threading.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace dyadit {

namespace {

int resolve_worker_count() {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    if (const char* env = std::getenv("DYADIT_THREADS")) {
        int requested = std::atoi(env);
        if (requested >= 1 && requested < hw) return requested;
        if (requested >= hw) return hw;
    }
    return hw;
}

// Minimal persistent pool: one task at a time, chunked work stealing via an
// atomic cursor. Good enough for the row-parallel loops in tensor ops.
class Pool {
public:
    Pool() : workers_(static_cast<std::size_t>(worker_count() > 1 ? worker_count() - 1 : 0)) {
        for (auto& t : workers_) t = std::thread([this] { worker_loop(); });
    }

    ~Pool() {
        {
            std::lock_guard<std::mutex> lk(m_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : workers_) t.join();
    }

    void run(std::int64_t begin, std::int64_t end, const std::function<void(std::int64_t)>& fn,
             std::int64_t grain) {
        std::unique_lock<std::mutex> lk(m_);
        fn_ = &fn;
        cursor_.store(begin, std::memory_order_relaxed);
        end_ = end;
        grain_ = grain;
        pending_ = static_cast<int>(workers_.size());
        ++generation_;
        lk.unlock();
        cv_.notify_all();

        drain();

        lk.lock();
        done_cv_.wait(lk, [this] { return pending_ == 0; });
        fn_ = nullptr;
    }

private:
    void drain() {
        const auto& fn = *fn_;
        for (;;) {
            std::int64_t i = cursor_.fetch_add(grain_, std::memory_order_relaxed);
            if (i >= end_) break;
            std::int64_t hi = std::min(end_, i + grain_);
            for (std::int64_t j = i; j < hi; ++j) fn(j);
        }
    }

    void worker_loop() {
        std::uint64_t seen = 0;
        for (;;) {
            std::unique_lock<std::mutex> lk(m_);
            cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
            if (stop_) return;
            seen = generation_;
            lk.unlock();

            drain();

            lk.lock();
            if (--pending_ == 0) done_cv_.notify_one();
        }
    }

    std::vector<std::thread> workers_;
    std::mutex m_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    const std::function<void(std::int64_t)>* fn_ = nullptr;
    std::atomic<std::int64_t> cursor_{0};
    std::int64_t end_ = 0;
    std::int64_t grain_ = 1;
    std::uint64_t generation_ = 0;
    int pending_ = 0;
    bool stop_ = false;
};

Pool& pool() {
    static Pool p;
    return p;
}

}  // namespace

int worker_count() {
    static int n = resolve_worker_count();
    return n;
}

void parallel_for(std::int64_t begin, std::int64_t end, const std::function<void(std::int64_t)>& fn,
                  std::int64_t grain) {
    if (end <= begin) return;
    if (grain < 1) grain = 1;
    std::int64_t count = end - begin;
    if (worker_count() == 1 || count <= grain) {
        for (std::int64_t i = begin; i < end; ++i) fn(i);
        return;
    }
    pool().run(begin, end, fn, grain);
}

}  // namespace dyadit
