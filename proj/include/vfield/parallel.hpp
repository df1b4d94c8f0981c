#ifndef VFIELD_PARALLEL_HPP
#define VFIELD_PARALLEL_HPP

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace vfield {

/// Worker cap: VF_THREADS when set to a positive integer, else hardware concurrency.
inline unsigned worker_count()
{
	if (const char* env = std::getenv("VF_THREADS")) {
		char* end = nullptr;
		const long n = std::strtol(env, &end, 10);
		if (end != env && *end == '\0' && n > 0)
			return static_cast<unsigned>(n);
	}
	return std::max(1u, std::thread::hardware_concurrency());
}

/**
 * Runs fn(i) for i in [0, n) over contiguous blocks. Callers write only to
 * slot i of preallocated outputs, so results do not depend on the worker count.
 * The first exception thrown by any worker is rethrown on the calling thread.
 */
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, unsigned workers = worker_count())
{
	workers = static_cast<unsigned>(std::min<std::size_t>(workers, n));
	if (workers <= 1) {
		for (std::size_t i = 0; i < n; ++i)
			fn(i);
		return;
	}
	std::exception_ptr failure;
	std::mutex failure_lock;
	std::vector<std::thread> pool;
	pool.reserve(workers);
	for (unsigned w = 0; w < workers; ++w) {
		const std::size_t begin = n * w / workers;
		const std::size_t end = n * (w + 1) / workers;
		pool.emplace_back([&, begin, end] {
			try {
				for (std::size_t i = begin; i < end; ++i)
					fn(i);
			} catch (...) {
				std::lock_guard lock(failure_lock);
				if (!failure)
					failure = std::current_exception();
			}
		});
	}
	for (auto& t : pool)
		t.join();
	if (failure)
		std::rethrow_exception(failure);
}

} // namespace vfield

#endif
