#include "storylogic/gateway.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace storylogic {

std::chrono::milliseconds BackoffPolicy::delay(int retry, double unit_random) const {
    const double scale = std::pow(factor, std::max(0, retry - 1));
    const double spread = 1.0 + jitter * (2.0 * unit_random - 1.0);
    return std::chrono::milliseconds(
        static_cast<std::chrono::milliseconds::rep>(std::llround(static_cast<double>(base.count()) * scale * spread)));
}

Gateway::Gateway(std::shared_ptr<ChatBackend> backend, const TemplateCatalog& catalog, ExemplarSet exemplars,
                 GatewayOptions options)
    : backend_(std::move(backend)),
      catalog_(catalog),
      exemplars_(std::move(exemplars)),
      options_(std::move(options)),
      rng_(options_.seed) {
    if (!backend_) throw InvariantError("gateway needs a backend");
    if (options_.concurrency == 0) throw InvariantError("concurrency must be >= 1");
}

void Gateway::sleep(std::chrono::milliseconds duration) {
    if (duration.count() <= 0) return;
    if (options_.sleeper) options_.sleeper(duration);
    else std::this_thread::sleep_for(duration);
}

void Gateway::acquire() {
    std::unique_lock lock(slot_mutex_);
    slot_cv_.wait(lock, [&] { return in_flight_ < options_.concurrency; });
    ++in_flight_;
}

void Gateway::release() {
    {
        std::lock_guard lock(slot_mutex_);
        --in_flight_;
    }
    slot_cv_.notify_one();
}

void Gateway::pace() {
    if (options_.min_interval.count() <= 0) return;
    std::chrono::milliseconds wait{0};
    {
        std::lock_guard lock(pace_mutex_);
        const auto now = std::chrono::steady_clock::now();
        const auto start = std::max(now, next_start_);
        next_start_ = start + options_.min_interval;
        wait = std::chrono::ceil<std::chrono::milliseconds>(start - now);
    }
    sleep(wait);
}

Completion Gateway::complete(const ChatRequest& request) {
    request.config.validate();
    struct Slot {
        Gateway& g;
        explicit Slot(Gateway& gateway) : g(gateway) { g.acquire(); }
        ~Slot() { g.release(); }
    } slot(*this);

    for (int attempt = 1;; ++attempt) {
        pace();
        try {
            Completion completion = backend_->send(request);
            completion.usage.attempts = attempt;
            return completion;
        } catch (const GatewayError& e) {
            if (!e.retryable() || attempt > request.config.retries) throw;
        }
        double unit = 0.0;
        {
            std::lock_guard lock(rng_mutex_);
            unit = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
        }
        sleep(options_.backoff.delay(attempt, unit));
    }
}

std::vector<Message> Gateway::prompt(const PromptRequest& prompt) const {
    return build_prompt(prompt, catalog_, exemplars_);
}

Completion Gateway::run(const PromptRequest& prompt, const GenerationConfig& config, RequestContext context) {
    return complete(ChatRequest{prompt.stage, this->prompt(prompt), config, std::move(context)});
}

} // namespace storylogic
