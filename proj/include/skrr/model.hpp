#pragma once

// Pre-norm residual encoder split into 2L sub-blocks. Even sub-blocks are
// attention, odd sub-blocks are feed-forward (or every sub-block is a plain
// linear map for the bounds-testing variant). An ExecutionPlan removes or
// substitutes sub-blocks during the forward pass.

#include "skrr/numerics.hpp"

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace skrr {

/// Index of a sub-block in [0, 2L). Block of sub-block j is j / 2.
using SubBlockId = int;

enum class SubBlockKind { Mha, Ffn, Linear };

std::string to_string(SubBlockKind kind);
SubBlockKind parse_sub_block_kind(const std::string& text);

class InvalidPlan : public Error {
public:
    using Error::Error;
};

class InvalidModel : public Error {
public:
    using Error::Error;
};

struct EncoderConfig {
    int num_blocks = 4;
    int d_model = 32;
    int n_heads = 4;
    int d_ff = 64;
    int d_cond = 16;
    int vocab_size = 64;
    int max_seq_len = 16;
    /// Every sub-block is LINEAR (bounds testing). Otherwise MHA/FFN by parity.
    bool linear_stack = false;
    float norm_eps = kDefaultNormEps;

    [[nodiscard]] int num_sub_blocks() const { return 2 * num_blocks; }
    [[nodiscard]] SubBlockKind kind(SubBlockId j) const;
    /// Throws InvalidModel on inconsistent dimensions.
    void validate() const;

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

inline int block_of(SubBlockId j) { return j / 2; }
inline bool same_parity(SubBlockId a, SubBlockId b) { return (a % 2) == (b % 2); }

/// Weights of one sub-block. Only the tensors belonging to `kind` are populated.
struct SubBlockWeights {
    SubBlockKind kind = SubBlockKind::Mha;
    Matrix norm_gain; // 1 x d_model (MHA, FFN)
    Matrix wq, wk, wv, wo; // d_model x d_model (MHA)
    Matrix w1; // d_model x d_ff (FFN)
    Matrix w2; // d_ff x d_model (FFN)
    Matrix w; // d_model x d_model (LINEAR), applied as W * row

    /// Named tensors in canonical order.
    [[nodiscard]] std::vector<std::pair<std::string, const Matrix*>> tensors() const;
    std::vector<std::pair<std::string, Matrix*>> tensors();

    /// Tensor that writes into the residual stream (Wo, W2 or W).
    Matrix& output_weight();
    [[nodiscard]] const Matrix& output_weight() const;

    [[nodiscard]] std::int64_t param_count() const;
    /// Euclidean norm of all tensors concatenated.
    [[nodiscard]] double param_norm() const;
    /// Euclidean norm of (this - other) over the concatenated tensors.
    [[nodiscard]] double param_distance(const SubBlockWeights& other) const;
};

enum class RedundancyMode { NearZero, DuplicateOf, InteractPair };

std::string to_string(RedundancyMode mode);
RedundancyMode parse_redundancy_mode(const std::string& text);

struct Redundancy {
    SubBlockId sub_block = 0;
    RedundancyMode mode = RedundancyMode::NearZero;
    double epsilon = 1e-3; // NearZero
    SubBlockId other = -1; // DuplicateOf source / InteractPair partner

    friend bool operator==(const Redundancy&, const Redundancy&) = default;
};

using RedundancySpec = std::vector<Redundancy>;

struct ModelPackage {
    static constexpr int kFormatVersion = 1;

    EncoderConfig config;
    Matrix embedding; // vocab x d_model
    std::vector<SubBlockWeights> sub_blocks; // 2L entries
    Matrix final_gain; // 1 x d_model
    Matrix projection; // d_model x d_cond
    std::vector<int> null_tokens;
    std::uint64_t seed = 0;
    int format_version = kFormatVersion;
    RedundancySpec redundancy;

    /// Checks all tensor shapes against the config. Throws InvalidModel.
    void validate() const;
};

/// Skip set plus re-use map applied on top of the dense forward.
struct ExecutionPlan {
    std::set<SubBlockId> skip_set;
    std::map<SubBlockId, SubBlockId> reuse_map;

    [[nodiscard]] bool empty() const { return skip_set.empty() && reuse_map.empty(); }
    /// Smallest sub-block whose behaviour differs from the dense model, or
    /// num_sub_blocks when nothing is modified.
    [[nodiscard]] int first_modified(int num_sub_blocks) const;

    friend bool operator==(const ExecutionPlan&, const ExecutionPlan&) = default;
};

/// Throws InvalidPlan unless indices are in range, reuse keys are skipped,
/// reuse sources are kept, parities match and nothing maps onto itself.
void validate_plan(const EncoderConfig& config, const ExecutionPlan& plan);

Matrix embed(const ModelPackage& pkg, const std::vector<int>& tokens);

/// F_j(h) computed with an explicit weight set (no residual).
Matrix sub_block_apply(const EncoderConfig& config, const SubBlockWeights& weights, const Matrix& h);

/// F_j(h) for sub-block j of the package (no residual).
Matrix sub_block_forward(const ModelPackage& pkg, SubBlockId j, const Matrix& h);

/// Residual stack from sub-block `start` onward. The plan must already be
/// valid. When `stages` is non-null, stages[s] receives the hidden state
/// entering sub-block s for s >= start and stages[2L] the stack output.
Matrix run_stack(const ModelPackage& pkg, Matrix h, const ExecutionPlan& plan, int start = 0,
                 std::vector<Matrix>* stages = nullptr);

Matrix final_norm(const ModelPackage& pkg, const Matrix& h);

/// embed -> residual stack under `plan` -> final norm.
Matrix encoder_forward(const ModelPackage& pkg, const std::vector<int>& tokens, const ExecutionPlan& plan = {});

std::int64_t count_params(const ModelPackage& pkg, SubBlockId j);
std::int64_t total_stack_params(const ModelPackage& pkg);

/// Fraction of sub-block parameters removed by the skip set. Re-use is free.
double plan_sparsity(const ModelPackage& pkg, const ExecutionPlan& plan);

} // namespace skrr
