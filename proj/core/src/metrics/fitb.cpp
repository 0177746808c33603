#include "icar/metrics/fitb.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "icar/error.hpp"
#include "icar/numcore/rng.hpp"

namespace icar::metrics {

std::vector<FitbTask> make_fitb_tasks(const std::vector<SceneInstance>& scenes, const ItemPool& negatives,
                                      std::size_t n_candidates, std::uint64_t seed) {
  if (n_candidates < 2) throw ContractError("make_fitb_tasks: need at least 2 candidates");
  std::vector<FitbTask> out;
  for (const auto& sc : scenes) {
    if (sc.items.size() < 2) continue;
    Rng rng = make_rng(seed, {0xf17b, sc.id});
    std::vector<Item> items = sc.items;
    std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.id < b.id; });
    const std::size_t blank = std::uniform_int_distribution<std::size_t>(0, items.size() - 1)(rng);
    FitbTask t;
    t.scene_id = sc.id;
    t.scene = sc.scene_embedding;
    t.ground_truth = items[blank];
    t.blank_category = t.ground_truth.category;
    for (std::size_t i = 0; i < items.size(); ++i)
      if (i != blank) t.context.push_back(items[i]);
    std::vector<const Item*> pick;
    for (std::size_t idx : negatives.in_category(t.blank_category)) {
      const Item& it = negatives.items()[idx];
      const bool in_scene = std::any_of(items.begin(), items.end(), [&](const Item& s) { return s.id == it.id; });
      if (!in_scene) pick.push_back(&it);
    }
    if (pick.size() < n_candidates - 1) {
      throw ContractError(fmt::format("make_fitb_tasks: category {} has only {} negatives, need {}", t.blank_category,
                                      pick.size(), n_candidates - 1));
    }
    // partial Fisher-Yates: first n_candidates - 1 entries become a uniform draw
    for (std::size_t i = 0; i + 1 < n_candidates; ++i) {
      std::swap(pick[i], pick[std::uniform_int_distribution<std::size_t>(i, pick.size() - 1)(rng)]);
      t.candidates.push_back(*pick[i]);
    }
    t.candidates.push_back(t.ground_truth);
    std::shuffle(t.candidates.begin(), t.candidates.end(), rng);
    out.push_back(std::move(t));
  }
  return out;
}

FitbResult fitb_eval(const gen::CompletionModel& model, const std::vector<FitbTask>& tasks, std::uint64_t eval_seed,
                     gen::Mode mode) {
  if (tasks.empty()) throw ContractError("fitb_eval: empty task list");
  FitbResult r;
  for (const auto& t : tasks) {
    const ItemId got = gen::fitb_predict(model, t.scene, t.blank_category, t.context, t.candidates,
                                         stream_seed(eval_seed, {t.scene_id}), mode);
    r.correct += got == t.ground_truth.id;
  }
  r.total = tasks.size();
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
  return r;
}

}  // namespace icar::metrics
