#pragma once

#include <cstdint>
#include <vector>

#include "icar/generator.hpp"
#include "icar/types.hpp"

namespace icar::metrics {

struct FitbTask {
  std::uint64_t scene_id = 0;
  Embedding scene;
  std::size_t blank_category = 0;
  std::vector<Item> context;     // the scene's other items
  Item ground_truth;
  std::vector<Item> candidates;  // ground truth plus negatives, shuffled
};

/// One task per scene with >= 2 items. The blank is a uniform scene item; the
/// n_candidates - 1 negatives are distinct items of its category drawn from
/// `negatives`, never from the scene itself. Deterministic in (seed, scene id).
std::vector<FitbTask> make_fitb_tasks(const std::vector<SceneInstance>& scenes, const ItemPool& negatives,
                                      std::size_t n_candidates, std::uint64_t seed);

struct FitbResult {
  double accuracy = 0;
  std::size_t correct = 0;
  std::size_t total = 0;
};

FitbResult fitb_eval(const gen::CompletionModel& model, const std::vector<FitbTask>& tasks, std::uint64_t eval_seed,
                     gen::Mode mode = gen::Mode::given_category);

}  // namespace icar::metrics
