#pragma once

#include <atomic>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace dag {

// Work sharing over disjoint index ranges. Chunk boundaries depend only on the
// problem size, never on the worker count, and every chunk is written by
// exactly one worker, so results are bitwise identical for any --threads value.
// Reductions are kept out of this helper on purpose; callers accumulate
// serially in index order.
class ThreadPool {
  public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    void set_threads(int n) {
        if (n < 1) n = 1;
        std::lock_guard<std::mutex> lk(config_mutex_);
        shutdown_workers();
        threads_ = n;
        start_workers();
    }

    int threads() const { return threads_; }

    void run(int64_t n_chunks, const std::function<void(int64_t)>& chunk_fn) {
        if (n_chunks <= 0) return;
        if (threads_ == 1 || n_chunks == 1 || in_worker_) {
            for (int64_t i = 0; i < n_chunks; ++i) chunk_fn(i);
            return;
        }
        std::unique_lock<std::mutex> lk(job_mutex_);
        job_fn_ = &chunk_fn;
        job_chunks_ = n_chunks;
        next_chunk_.store(0, std::memory_order_relaxed);
        pending_ = static_cast<int>(workers_.size());
        job_id_++;
        lk.unlock();
        wake_.notify_all();

        in_worker_ = true;
        drain(chunk_fn, n_chunks);
        in_worker_ = false;

        std::unique_lock<std::mutex> lk2(job_mutex_);
        done_.wait(lk2, [this] { return pending_ == 0; });
        job_fn_ = nullptr;
    }

    ~ThreadPool() { shutdown_workers(); }

  private:
    ThreadPool() {
        threads_ = static_cast<int>(std::thread::hardware_concurrency());
        if (threads_ < 1) threads_ = 1;
        start_workers();
    }

    void start_workers() {
        stop_ = false;
        for (int i = 1; i < threads_; ++i) {
            workers_.emplace_back([this] { worker_loop(); });
        }
    }

    void shutdown_workers() {
        {
            std::lock_guard<std::mutex> lk(job_mutex_);
            stop_ = true;
        }
        wake_.notify_all();
        for (auto& w : workers_) w.join();
        workers_.clear();
    }

    void worker_loop() {
        in_worker_ = true;
        uint64_t seen_job = 0;
        while (true) {
            const std::function<void(int64_t)>* fn = nullptr;
            int64_t chunks = 0;
            {
                std::unique_lock<std::mutex> lk(job_mutex_);
                wake_.wait(lk, [&] { return stop_ || job_id_ != seen_job; });
                if (stop_) return;
                seen_job = job_id_;
                fn = job_fn_;
                chunks = job_chunks_;
            }
            if (fn) drain(*fn, chunks);
            {
                std::lock_guard<std::mutex> lk(job_mutex_);
                if (--pending_ == 0) done_.notify_all();
            }
        }
    }

    void drain(const std::function<void(int64_t)>& fn, int64_t chunks) {
        while (true) {
            int64_t i = next_chunk_.fetch_add(1, std::memory_order_relaxed);
            if (i >= chunks) break;
            fn(i);
        }
    }

    std::mutex config_mutex_;
    std::mutex job_mutex_;
    std::condition_variable wake_;
    std::condition_variable done_;
    std::vector<std::thread> workers_;
    const std::function<void(int64_t)>* job_fn_ = nullptr;
    int64_t job_chunks_ = 0;
    std::atomic<int64_t> next_chunk_{0};
    int pending_ = 0;
    uint64_t job_id_ = 0;
    bool stop_ = false;
    int threads_ = 1;
    static thread_local bool in_worker_;
};

inline thread_local bool ThreadPool::in_worker_ = false;

inline void set_threads(int n) { ThreadPool::instance().set_threads(n); }
inline int thread_count() { return ThreadPool::instance().threads(); }

// Runs fn(i) for i in [0, n); fn writes only to slots owned by index i.
inline void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
    ThreadPool::instance().run(n, fn);
}

}  // namespace dag
