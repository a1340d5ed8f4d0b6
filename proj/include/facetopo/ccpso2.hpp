#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "facetopo/rng.hpp"

namespace facetopo::ccpso2 {

struct SwarmConfig {
    int dimensions = 0;
    std::vector<int> group_sizes{1, 5, 7};
    int swarm_size = 10;
    int iterations = 40;
    std::uint64_t seed = 0;
    double bounds_low = -1.0;
    double bounds_high = 1.0;
    int restarts = 1;

    void validate() const;
};

// Identifies one objective evaluation. Deterministic across worker counts,
// which lets callers derive per-evaluation RNG streams from it.
struct EvalTag {
    int run = 0;
    int generation = 0;
    int group = 0;
    int particle = 0;
    int kind = 0;  // 0 = candidate position, 1 = personal-best context
};

using Objective = std::function<double(std::span<const double>)>;
using TaggedObjective = std::function<double(std::span<const double>, const EvalTag&)>;

struct GenerationRecord {
    int run = 0;
    int generation = 0;
    double best_fitness = 0.0;
    long evaluations = 0;  // cumulative within the run
};

struct RunSummary {
    int run = 0;
    double best_fitness = 0.0;
    long evaluations = 0;
    std::vector<double> best_vector;
};

struct OptimizeResult {
    std::vector<double> best_vector;
    double best_fitness = 0.0;
    EvalTag best_tag;
    std::vector<GenerationRecord> history;  // winning run, one row per generation
    std::vector<RunSummary> runs;
    long total_evaluations = 0;
    long nan_warnings = 0;
};

using ProgressSink = std::function<void(const GenerationRecord&)>;

std::string history_to_csv(const std::vector<GenerationRecord>& history);

// One cooperatively-coevolving swarm over a single position matrix.
// Dimension groups act as the per-swarm variable subsets; out-of-group
// coordinates of an evaluation context come from the current global best.
class Optimizer {
public:
    Optimizer(SwarmConfig config, TaggedObjective objective, int workers = 1, int run_index = 0);

    void step();
    std::vector<GenerationRecord> run(const ProgressSink& sink = {});

    // state accessors (mainly for tests)
    int generation() const { return generation_; }
    bool stagnation_flag() const { return stagnation_; }
    int current_group_size() const { return group_size_; }
    int group_count() const { return static_cast<int>(groups_.size()); }
    const std::vector<std::vector<int>>& group_assignment() const { return groups_; }
    const std::vector<std::vector<double>>& positions() const { return positions_; }
    const std::vector<std::vector<double>>& personal_bests() const { return pbest_; }
    const std::vector<double>& personal_best_fitness() const { return pbest_fitness_; }
    const std::vector<double>& global_best() const { return gbest_; }
    double global_best_fitness() const { return gbest_fitness_; }
    const EvalTag& global_best_tag() const { return gbest_tag_; }
    long evaluations() const { return evaluations_; }
    long nan_warnings() const { return nan_warnings_; }

private:
    void regroup();
    double reflect(double x) const;
    std::vector<double> make_context(const std::vector<int>& group,
                                     const std::vector<double>& source) const;
    void evaluate_batch(const std::vector<std::vector<double>>& contexts,
                        const std::vector<EvalTag>& tags, std::vector<double>& out);

    SwarmConfig cfg_;
    TaggedObjective objective_;
    int workers_;
    int run_index_;
    Rng rng_;

    int generation_ = 0;
    bool stagnation_ = false;
    int group_size_ = 0;
    std::vector<std::vector<int>> groups_;

    std::vector<std::vector<double>> positions_;  // swarm_size x dimensions
    std::vector<std::vector<double>> pbest_;
    std::vector<double> pbest_fitness_;  // latest group-context fitness per particle
    std::vector<double> gbest_;
    double gbest_fitness_ = 0.0;
    EvalTag gbest_tag_;
    long evaluations_ = 0;
    long nan_warnings_ = 0;
};

OptimizeResult optimize(const TaggedObjective& objective, const SwarmConfig& config,
                        int workers = 1, const ProgressSink& sink = {});
OptimizeResult optimize(const Objective& objective, const SwarmConfig& config,
                        int workers = 1, const ProgressSink& sink = {});

}  // namespace facetopo::ccpso2
