// SPDX-License-Identifier: Apache-2.0
#include "leap/data.hpp"

#include <algorithm>
#include <numeric>

namespace leap {

namespace {

constexpr int kParityToken = 3;
constexpr int kMajorityTokenA = 1;
constexpr int kMajorityTokenB = 2;

// Draw `wanted` distinct positions in [0, n) by a partial Fisher-Yates pass.
std::vector<std::size_t> distinct_positions(std::size_t n, std::size_t wanted, Rng& rng) {
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i = 0; i < wanted; ++i) {
        std::swap(pool[i], pool[i + rng.uniform_index(n - i)]);
    }
    pool.resize(wanted);
    return pool;
}

// Uniform token excluding the given markers (markers must be sorted).
int filler_token(std::size_t vocab, const std::vector<int>& exclude, Rng& rng) {
    int v = static_cast<int>(rng.uniform_index(vocab - exclude.size()));
    for (int ex : exclude) {
        if (v >= ex) ++v;
    }
    return v;
}

void make_parity(const TaskConfig& task, Rng& rng, int* tokens, int& label) {
    const auto planted = rng.uniform_index(4); // 0..3 pattern occurrences
    auto where = distinct_positions(task.seq_len, planted, rng);
    std::vector<bool> is_pattern(task.seq_len, false);
    for (std::size_t p : where) is_pattern[p] = true;
    for (std::size_t i = 0; i < task.seq_len; ++i) {
        tokens[i] = is_pattern[i] ? kParityToken
                                  : filler_token(task.vocab, {kParityToken}, rng);
    }
    label = static_cast<int>(planted % 2);
}

void make_majority(const TaskConfig& task, Rng& rng, int* tokens, int& label) {
    std::size_t count_a = 1 + rng.uniform_index(6);
    std::size_t count_b = 1 + rng.uniform_index(6);
    while (count_b == count_a) {
        count_b = 1 + rng.uniform_index(6);
    }
    auto where = distinct_positions(task.seq_len, count_a + count_b, rng);
    std::vector<int> planted(task.seq_len, -1);
    for (std::size_t i = 0; i < count_a; ++i) planted[where[i]] = kMajorityTokenA;
    for (std::size_t i = count_a; i < count_a + count_b; ++i) planted[where[i]] = kMajorityTokenB;
    for (std::size_t i = 0; i < task.seq_len; ++i) {
        tokens[i] = planted[i] >= 0
                        ? planted[i]
                        : filler_token(task.vocab, {kMajorityTokenA, kMajorityTokenB}, rng);
    }
    label = count_a > count_b ? 1 : 0;
}

} // namespace

TaskKind task_from_name(const std::string& name) {
    if (name == "parity") return TaskKind::parity;
    if (name == "majority") return TaskKind::majority;
    throw ConfigError("unknown task '" + name + "' (expected parity or majority)");
}

std::string task_name(TaskKind kind) {
    return kind == TaskKind::parity ? "parity" : "majority";
}

Dataset generate_dataset(const TaskConfig& task, Rng rng, std::size_t count) {
    if (task.vocab < 8 || task.seq_len < 12 || task.classes != 2) {
        throw ConfigError("task generation needs vocab >= 8, seq_len >= 12, 2 classes");
    }
    Dataset data;
    data.count = count;
    data.seq_len = task.seq_len;
    data.tokens.resize(count * task.seq_len);
    data.labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        int* row = data.tokens.data() + i * task.seq_len;
        switch (task.kind) {
        case TaskKind::parity: make_parity(task, rng, row, data.labels[i]); break;
        case TaskKind::majority: make_majority(task, rng, row, data.labels[i]); break;
        }
    }
    return data;
}

Batch nth_batch(const Dataset& data, std::size_t index, std::size_t batch_size) {
    const std::size_t start = index * batch_size;
    if (start + batch_size > data.count) {
        throw UsageError("batch index past the end of the dataset");
    }
    Batch batch;
    batch.batch_size = batch_size;
    batch.seq_len = data.seq_len;
    batch.tokens.assign(data.tokens.begin() + start * data.seq_len,
                        data.tokens.begin() + (start + batch_size) * data.seq_len);
    batch.labels.assign(data.labels.begin() + start, data.labels.begin() + start + batch_size);
    return batch;
}

} // namespace leap
