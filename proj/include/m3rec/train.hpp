// Copyright 2026 the m3rec authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "m3rec/adam.hpp"
#include "m3rec/datagen.hpp"
#include "m3rec/grouping.hpp"
#include "m3rec/model.hpp"
#include "m3rec/rng.hpp"

namespace m3rec {

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 128;
  std::size_t epochs = 10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 1;
  // Aligned with the model's task registry; empty means "use TaskSpec weights".
  std::vector<double> task_weights;
  // The group level trains as an extra weighted task when > 0.
  double group_weight = 0.0;
  std::size_t group_count = 0;  // 0 -> ceil(sqrt(users/2))

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (group_weight < 0.0) throw ConfigError("train: group_weight must be >= 0");
  }
};

struct EpochStats {
  std::size_t epoch = 0;
  std::vector<double> task_loss_sums;  // aligned with the task registry
  double group_loss_sum = 0.0;
  double joint_loss_sum = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
};

// One (input prefix, next id) pair per training sequence of length >= 2: the
// final action is the target, everything before it is the input.
inline std::vector<std::vector<Example>> training_pairs(const Dataset& ds,
                                                        std::size_t max_len) {
  std::vector<std::vector<Example>> pools(ds.tasks.size());
  for (std::size_t ti = 0; ti < ds.sequences.size(); ++ti) {
    for (const ActionSequence& s : ds.sequences[ti]) {
      if (s.size() < 2) continue;
      Example ex;
      ex.target = s.actions.back().id;
      const std::size_t take = s.size() - 1;
      const std::size_t from = max_len > 0 && take > max_len ? take - max_len : 0;
      for (std::size_t j = from; j < take; ++j) ex.input.push_back(s.actions[j].id);
      pools[ti].push_back(std::move(ex));
    }
  }
  return pools;
}

inline std::vector<GroupExample> group_training_pairs(const Dataset& ds,
                                                      std::span<const UserGroup> groups,
                                                      std::size_t max_len) {
  std::vector<GroupExample> pool;
  for (const UserGroup& g : groups) {
    ActionSequence merged = merged_main_sequence(ds, g.members, g.group_id);
    if (merged.size() < 2) continue;
    GroupExample ex;
    ex.members = g.members;
    ex.target = merged.actions.back().id;
    const std::size_t take = merged.size() - 1;
    const std::size_t from = max_len > 0 && take > max_len ? take - max_len : 0;
    for (std::size_t j = from; j < take; ++j) ex.input.push_back(merged.actions[j].id);
    pool.push_back(std::move(ex));
  }
  return pool;
}

// Joint multi-task training. Each step draws one batch per nonzero-weight task
// (round-robin over that task's shuffled pool, reshuffled per epoch from a
// per-task stream), sums the weighted losses, and takes one Adam step. All
// randomness flows from cfg.seed through per-task streams, so dropping a task
// (weight 0) leaves every other task's draw order untouched.
inline TrainHistory train(
    M3RecModel& model, const Dataset& trainset, const TrainConfig& cfg,
    const std::function<void(std::size_t, const M3RecModel&)>& on_epoch = {}) {
  cfg.validate();
  if (!cfg.task_weights.empty() && cfg.task_weights.size() != model.tasks.size())
    throw ConfigError("train: task_weights length " +
                      std::to_string(cfg.task_weights.size()) + " vs registry " +
                      std::to_string(model.tasks.size()));
  std::vector<double> weights(model.tasks.size());
  for (std::size_t i = 0; i < model.tasks.size(); ++i)
    weights[i] = cfg.task_weights.empty() ? model.tasks[i].weight : cfg.task_weights[i];

  auto pools = training_pairs(trainset, model.max_seq_len);
  // the dataset may carry tasks the model does not train; align by task id
  if (trainset.tasks.size() != model.tasks.size() ||
      [&] {
        for (std::size_t i = 0; i < model.tasks.size(); ++i)
          if (trainset.tasks[i].task_id != model.tasks[i].task_id) return true;
        return false;
      }()) {
    std::vector<std::vector<Example>> aligned(model.tasks.size());
    for (std::size_t i = 0; i < model.tasks.size(); ++i)
      aligned[i] = pools[trainset.task_index(model.tasks[i].task_id)];
    pools = std::move(aligned);
  }

  std::vector<GroupExample> group_pool;
  if (cfg.group_weight > 0.0) {
    const auto groups =
        build_groups(model, trainset, cfg.group_count, cfg.seed);
    group_pool = group_training_pairs(trainset, groups, model.max_seq_len);
    if (group_pool.empty())
      throw ConfigError("train: group task enabled but no group has a usable sequence");
  }

  for (std::size_t i = 0; i < model.tasks.size(); ++i)
    if (weights[i] > 0.0 && pools[i].empty())
      throw ConfigError("train: empty training pool for task " +
                        model.tasks[i].task_id);

  const Rng root(cfg.seed);
  std::vector<Rng> task_rng;
  task_rng.reserve(model.tasks.size());
  for (const TaskSpec& ts : model.tasks)
    task_rng.push_back(root.derive("train." + ts.task_id));
  Rng group_rng = root.derive("train.group-level");

  AdamConfig acfg{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps};
  AdamOptimizer opt(model.parameters(), acfg);

  std::size_t steps_per_epoch = 0;
  for (std::size_t i = 0; i < pools.size(); ++i)
    if (weights[i] > 0.0)
      steps_per_epoch = std::max(
          steps_per_epoch, (pools[i].size() + cfg.batch_size - 1) / cfg.batch_size);
  if (cfg.group_weight > 0.0)
    steps_per_epoch = std::max(
        steps_per_epoch, (group_pool.size() + cfg.batch_size - 1) / cfg.batch_size);
  if (steps_per_epoch == 0)
    throw ConfigError("train: no task has positive weight and training data");

  std::vector<std::vector<std::size_t>> order(pools.size());
  std::vector<std::size_t> group_order;

  TrainHistory history;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < pools.size(); ++i) {
      if (weights[i] == 0.0) continue;
      order[i].resize(pools[i].size());
      std::iota(order[i].begin(), order[i].end(), std::size_t{0});
      task_rng[i].shuffle(order[i]);
    }
    if (cfg.group_weight > 0.0) {
      group_order.resize(group_pool.size());
      std::iota(group_order.begin(), group_order.end(), std::size_t{0});
      group_rng.shuffle(group_order);
    }
    std::vector<std::size_t> cursor(pools.size(), 0);
    std::size_t group_cursor = 0;

    EpochStats stats;
    stats.epoch = epoch;
    stats.task_loss_sums.assign(model.tasks.size(), 0.0);

    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      Tape t;
      std::vector<Var> terms;
      for (std::size_t i = 0; i < pools.size(); ++i) {
        if (weights[i] == 0.0) continue;
        const std::size_t take = std::min(cfg.batch_size, pools[i].size());
        std::vector<Example> batch;
        batch.reserve(take);
        for (std::size_t b = 0; b < take; ++b) {
          batch.push_back(pools[i][order[i][cursor[i]]]);
          cursor[i] = (cursor[i] + 1) % pools[i].size();
        }
        Var li = task_loss(t, model, i, batch);
        stats.task_loss_sums[i] += li.value()[0];
        terms.push_back(weights[i] == 1.0 ? li : scalar_affine(li, weights[i], 0.0));
      }
      if (cfg.group_weight > 0.0) {
        const std::size_t take = std::min(cfg.batch_size, group_pool.size());
        std::vector<GroupExample> batch;
        batch.reserve(take);
        for (std::size_t b = 0; b < take; ++b) {
          batch.push_back(group_pool[group_order[group_cursor]]);
          group_cursor = (group_cursor + 1) % group_pool.size();
        }
        Var lg = group_task_loss(t, model, batch);
        stats.group_loss_sum += lg.value()[0];
        terms.push_back(cfg.group_weight == 1.0
                            ? lg
                            : scalar_affine(lg, cfg.group_weight, 0.0));
      }
      Var total = terms.size() == 1 ? terms.front()
                                    : add_all(std::span<const Var>(terms));
      stats.joint_loss_sum += total.value()[0];
      model.zero_grads();
      t.backward(total);
      opt.step();
    }
    history.epochs.push_back(std::move(stats));
    if (on_epoch) on_epoch(epoch, model);
  }
  return history;
}

inline void save_history(const TrainHistory& h, const std::vector<TaskSpec>& tasks,
                         const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("save_history: cannot open " + path);
  os << "epoch\tterm\tloss_sum\n";
  os.precision(17);
  for (const EpochStats& e : h.epochs) {
    for (std::size_t i = 0; i < e.task_loss_sums.size(); ++i)
      os << e.epoch << "\t" << tasks[i].task_id << "\t" << e.task_loss_sums[i] << "\n";
    if (e.group_loss_sum != 0.0)
      os << e.epoch << "\tgroup\t" << e.group_loss_sum << "\n";
    os << e.epoch << "\tjoint\t" << e.joint_loss_sum << "\n";
  }
}

}  // namespace m3rec
