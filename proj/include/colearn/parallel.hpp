#pragma once

#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace colearn {

/// Fixed-size worker pool running index-parallel loops. Work item k always
/// runs the same function on the same data, so results never depend on the
/// worker count; only scheduling does.
class WorkerPool {
public:
    explicit WorkerPool(std::size_t threads) {
        for (std::size_t t = 1; t < threads; ++t) workers_.emplace_back([this] { worker_loop(); });
    }

    WorkerPool(const WorkerPool&) = delete;
    WorkerPool& operator=(const WorkerPool&) = delete;

    ~WorkerPool() {
        {
            std::lock_guard lock(mutex_);
            stopping_ = true;
        }
        wake_.notify_all();
        for (auto& w : workers_) w.join();
    }

    std::size_t threads() const { return workers_.size() + 1; }

    /// Runs fn(0..count-1), the calling thread included; rethrows the first
    /// exception after every item has finished.
    void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
        if (workers_.empty() || count <= 1) {
            for (std::size_t k = 0; k < count; ++k) fn(k);
            return;
        }
        {
            std::lock_guard lock(mutex_);
            job_ = &fn;
            count_ = count;
            next_ = 0;
            pending_ = count;
            error_ = nullptr;
            ++epoch_;
        }
        wake_.notify_all();
        drain();
        std::unique_lock lock(mutex_);
        done_.wait(lock, [this] { return pending_ == 0; });
        job_ = nullptr;
        if (error_) std::rethrow_exception(error_);
    }

private:
    void drain() {
        for (;;) {
            std::size_t k;
            const std::function<void(std::size_t)>* job;
            {
                std::lock_guard lock(mutex_);
                if (job_ == nullptr || next_ >= count_) return;
                k = next_++;
                job = job_;
            }
            try {
                (*job)(k);
            } catch (...) {
                std::lock_guard lock(mutex_);
                if (!error_) error_ = std::current_exception();
            }
            std::lock_guard lock(mutex_);
            if (--pending_ == 0) done_.notify_all();
        }
    }

    void worker_loop() {
        std::size_t seen = 0;
        for (;;) {
            {
                std::unique_lock lock(mutex_);
                wake_.wait(lock, [&] { return stopping_ || epoch_ != seen; });
                if (stopping_) return;
                seen = epoch_;
            }
            drain();
        }
    }

    std::vector<std::thread> workers_;
    std::mutex mutex_;
    std::condition_variable wake_;
    std::condition_variable done_;
    const std::function<void(std::size_t)>* job_ = nullptr;
    std::size_t count_ = 0;
    std::size_t next_ = 0;
    std::size_t pending_ = 0;
    std::size_t epoch_ = 0;
    std::exception_ptr error_;
    bool stopping_ = false;
};

}  // namespace colearn
