#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace mivae::harness {

// Runs task(i) for i in [0, count) on up to `jobs` threads. Tasks are claimed
// in index order; each task's exception is captured in its slot instead of
// stopping the others. Results must be written by index so they do not
// depend on scheduling.
inline std::vector<std::exception_ptr> run_tasks(std::size_t count, std::size_t jobs,
                                                 const std::function<void(std::size_t)>& task) {
    std::vector<std::exception_ptr> errors(count);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            try {
                task(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(count, 1));
    if (jobs == 1) {
        worker();
        return errors;
    }
    std::vector<std::thread> threads;
    threads.reserve(jobs);
    for (std::size_t t = 0; t < jobs; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    return errors;
}

} // namespace mivae::harness
