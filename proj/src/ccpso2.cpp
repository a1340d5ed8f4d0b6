#include "facetopo/ccpso2.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include "facetopo/errors.hpp"

namespace facetopo::ccpso2 {

void SwarmConfig::validate() const {
    if (dimensions < 1) throw validation_error("swarm config: dimensions must be positive");
    if (group_sizes.empty()) throw validation_error("swarm config: group_sizes must be non-empty");
    for (int s : group_sizes) {
        if (s < 1) throw validation_error("swarm config: group sizes must be positive");
        if (s > dimensions)
            throw validation_error("swarm config: group size " + std::to_string(s) +
                                   " exceeds dimensions " + std::to_string(dimensions));
    }
    if (swarm_size < 2) throw validation_error("swarm config: swarm_size must be at least 2");
    if (iterations < 1) throw validation_error("swarm config: iterations must be at least 1");
    if (!(bounds_low < bounds_high)) throw validation_error("swarm config: bounds_low must be < bounds_high");
    if (restarts < 1 || restarts > 30)
        throw validation_error("swarm config: restarts must be in [1, 30]");
}

std::string history_to_csv(const std::vector<GenerationRecord>& history) {
    std::ostringstream os;
    os << "generation,best_fitness,evaluations\n";
    os.precision(17);
    for (const auto& rec : history) {
        os << rec.generation << ',' << rec.best_fitness << ',' << rec.evaluations << '\n';
    }
    return os.str();
}

Optimizer::Optimizer(SwarmConfig config, TaggedObjective objective, int workers, int run_index)
    : cfg_(std::move(config)),
      objective_(std::move(objective)),
      workers_(std::max(1, workers)),
      run_index_(run_index),
      rng_(mix_seed({cfg_.seed, 0x5157ull, static_cast<std::uint64_t>(run_index)})) {
    cfg_.validate();
    int s = cfg_.swarm_size;
    int d = cfg_.dimensions;
    positions_.assign(static_cast<std::size_t>(s), std::vector<double>(static_cast<std::size_t>(d)));
    for (auto& p : positions_)
        for (auto& x : p) x = rng_.uniform(cfg_.bounds_low, cfg_.bounds_high);
    pbest_ = positions_;
    pbest_fitness_.assign(static_cast<std::size_t>(s), std::numeric_limits<double>::infinity());
    // The global best starts undefined; the first generation always fills it,
    // so no objective evaluations are spent during initialization.
    gbest_ = positions_[0];
    gbest_fitness_ = std::numeric_limits<double>::infinity();
}

void Optimizer::regroup() {
    group_size_ = cfg_.group_sizes[static_cast<std::size_t>(
        rng_.uniform_int(static_cast<int>(cfg_.group_sizes.size())))];
    std::vector<int> perm(static_cast<std::size_t>(cfg_.dimensions));
    std::iota(perm.begin(), perm.end(), 0);
    rng_.shuffle(perm);
    groups_.clear();
    for (int start = 0; start < cfg_.dimensions; start += group_size_) {
        int end = std::min(start + group_size_, cfg_.dimensions);
        groups_.emplace_back(perm.begin() + start, perm.begin() + end);
    }
}

double Optimizer::reflect(double x) const {
    if (x >= cfg_.bounds_low && x <= cfg_.bounds_high) return x;
    double width = cfg_.bounds_high - cfg_.bounds_low;
    // triangle-wave fold with period 2*width
    double y = std::fmod(x - cfg_.bounds_low, 2.0 * width);
    if (y < 0) y += 2.0 * width;
    double folded = y <= width ? y : 2.0 * width - y;
    return cfg_.bounds_low + folded;
}

std::vector<double> Optimizer::make_context(const std::vector<int>& group,
                                            const std::vector<double>& source) const {
    std::vector<double> ctx = gbest_;
    for (int d : group) ctx[static_cast<std::size_t>(d)] = source[static_cast<std::size_t>(d)];
    return ctx;
}

void Optimizer::evaluate_batch(const std::vector<std::vector<double>>& contexts,
                               const std::vector<EvalTag>& tags, std::vector<double>& out) {
    std::size_t count = contexts.size();
    out.assign(count, 0.0);
    auto eval_one = [&](std::size_t k) {
        out[k] = objective_(std::span<const double>(contexts[k]), tags[k]);
    };
    if (workers_ <= 1 || count <= 1) {
        for (std::size_t k = 0; k < count; ++k) eval_one(k);
    } else {
        int nthreads = std::min<std::size_t>(static_cast<std::size_t>(workers_), count);
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(nthreads));
        for (int t = 0; t < nthreads; ++t) {
            pool.emplace_back([&, t]() {
                for (std::size_t k = static_cast<std::size_t>(t); k < count;
                     k += static_cast<std::size_t>(nthreads))
                    eval_one(k);
            });
        }
        for (auto& th : pool) th.join();
    }
    evaluations_ += static_cast<long>(count);
    for (auto& f : out) {
        if (std::isnan(f)) {
            f = std::numeric_limits<double>::infinity();
            ++nan_warnings_;
        }
    }
}

void Optimizer::step() {
    if (generation_ == 0 || stagnation_) regroup();

    int s = cfg_.swarm_size;
    bool improved = false;

    std::vector<std::vector<double>> contexts;
    std::vector<EvalTag> tags;
    std::vector<double> fitness;
    std::vector<double> group_fitness(static_cast<std::size_t>(s));

    for (int gi = 0; gi < static_cast<int>(groups_.size()); ++gi) {
        const auto& group = groups_[static_cast<std::size_t>(gi)];

        // two contexts per particle: its candidate position and its personal best
        contexts.clear();
        tags.clear();
        for (int i = 0; i < s; ++i) {
            contexts.push_back(make_context(group, positions_[static_cast<std::size_t>(i)]));
            tags.push_back({run_index_, generation_, gi, i, 0});
            contexts.push_back(make_context(group, pbest_[static_cast<std::size_t>(i)]));
            tags.push_back({run_index_, generation_, gi, i, 1});
        }
        evaluate_batch(contexts, tags, fitness);

        // personal bests, then the global best, in fixed particle order
        int swarm_best = 0;
        for (int i = 0; i < s; ++i) {
            double fx = fitness[static_cast<std::size_t>(2 * i)];
            double fy = fitness[static_cast<std::size_t>(2 * i + 1)];
            if (fx < fy) {
                for (int d : group)
                    pbest_[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)] =
                        positions_[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)];
                group_fitness[static_cast<std::size_t>(i)] = fx;
            } else {
                group_fitness[static_cast<std::size_t>(i)] = fy;
            }
            pbest_fitness_[static_cast<std::size_t>(i)] = group_fitness[static_cast<std::size_t>(i)];
            if (group_fitness[static_cast<std::size_t>(i)] < group_fitness[static_cast<std::size_t>(swarm_best)])
                swarm_best = i;
        }
        if (group_fitness[static_cast<std::size_t>(swarm_best)] < gbest_fitness_) {
            // b(j, pbest) == gbest with the group block replaced, so copying the
            // block keeps gbest_fitness_ exact
            for (int d : group)
                gbest_[static_cast<std::size_t>(d)] =
                    pbest_[static_cast<std::size_t>(swarm_best)][static_cast<std::size_t>(d)];
            gbest_fitness_ = group_fitness[static_cast<std::size_t>(swarm_best)];
            int kind = fitness[static_cast<std::size_t>(2 * swarm_best)] <
                               fitness[static_cast<std::size_t>(2 * swarm_best + 1)]
                           ? 0
                           : 1;
            gbest_tag_ = {run_index_, generation_, gi, swarm_best, kind};
            improved = true;
        }

        // sample new positions around personal bests / ring-local bests
        for (int i = 0; i < s; ++i) {
            int left = (i + s - 1) % s;
            int right = (i + 1) % s;
            int lbest = i;
            if (group_fitness[static_cast<std::size_t>(left)] < group_fitness[static_cast<std::size_t>(lbest)])
                lbest = left;
            if (group_fitness[static_cast<std::size_t>(right)] < group_fitness[static_cast<std::size_t>(lbest)])
                lbest = right;
            for (int d : group) {
                double py = pbest_[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)];
                double ly = pbest_[static_cast<std::size_t>(lbest)][static_cast<std::size_t>(d)];
                double spread = std::fabs(py - ly);
                double x;
                if (rng_.uniform01() < 0.5) {
                    x = py + rng_.cauchy() * spread;
                } else {
                    x = ly + rng_.gaussian() * spread;
                }
                positions_[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)] = reflect(x);
            }
        }
    }

    stagnation_ = !improved;
    ++generation_;
}

std::vector<GenerationRecord> Optimizer::run(const ProgressSink& sink) {
    std::vector<GenerationRecord> history;
    history.reserve(static_cast<std::size_t>(cfg_.iterations));
    for (int it = 0; it < cfg_.iterations; ++it) {
        step();
        GenerationRecord rec{run_index_, it, gbest_fitness_, evaluations_};
        history.push_back(rec);
        if (sink) sink(rec);
    }
    return history;
}

OptimizeResult optimize(const TaggedObjective& objective, const SwarmConfig& config, int workers,
                        const ProgressSink& sink) {
    config.validate();
    OptimizeResult result;
    result.best_fitness = std::numeric_limits<double>::infinity();
    for (int r = 0; r < config.restarts; ++r) {
        Optimizer opt(config, objective, workers, r);
        auto history = opt.run(sink);
        RunSummary summary;
        summary.run = r;
        summary.best_fitness = opt.global_best_fitness();
        summary.evaluations = opt.evaluations();
        summary.best_vector = opt.global_best();
        result.total_evaluations += opt.evaluations();
        result.nan_warnings += opt.nan_warnings();
        if (summary.best_fitness < result.best_fitness) {
            result.best_fitness = summary.best_fitness;
            result.best_vector = summary.best_vector;
            result.best_tag = opt.global_best_tag();
            result.history = history;
        }
        result.runs.push_back(std::move(summary));
    }
    return result;
}

OptimizeResult optimize(const Objective& objective, const SwarmConfig& config, int workers,
                        const ProgressSink& sink) {
    return optimize(
        [&objective](std::span<const double> x, const EvalTag&) { return objective(x); }, config,
        workers, sink);
}

}  // namespace facetopo::ccpso2
