// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "leap/errors.hpp"
#include "leap/rng.hpp"

namespace leap {

/// Synthetic sequence-classification tasks, generated deterministically from a
/// seed.
///
///   parity   — the label is the parity of the number of occurrences of a
///              fixed pattern token (0..3 occurrences planted per sequence).
///   majority — two marker tokens are planted with distinct counts; the label
///              says which one occurs more often.
enum class TaskKind { parity, majority };

TaskKind task_from_name(const std::string& name);
std::string task_name(TaskKind kind);

struct TaskConfig {
    TaskKind kind = TaskKind::parity;
    std::size_t vocab = 32;
    std::size_t seq_len = 16;
    std::size_t classes = 2;
};

struct Dataset {
    std::size_t count = 0;
    std::size_t seq_len = 0;
    std::vector<int> tokens; // count * seq_len, row-major
    std::vector<int> labels; // count
};

struct Batch {
    std::size_t batch_size = 0;
    std::size_t seq_len = 0;
    std::vector<int> tokens; // batch_size * seq_len
    std::vector<int> labels; // batch_size
};

Dataset generate_dataset(const TaskConfig& task, Rng rng, std::size_t count);

/// Examples [index*batch_size, (index+1)*batch_size) of the dataset.
Batch nth_batch(const Dataset& data, std::size_t index, std::size_t batch_size);

} // namespace leap
