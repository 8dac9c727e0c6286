#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "triage/backend.hpp"
#include "triage/core.hpp"

namespace triage::eval {

// ---- conversation judging --------------------------------------------------

enum class Aspect { SPE, FLE, UND, INF, PAT, ACC };

std::string_view aspect_name(Aspect aspect) noexcept;
std::optional<Aspect> parse_aspect(std::string_view name);
// The yes/no question put to the judge for each aspect. PAT is phrased
// negatively, so lower is better there.
std::string_view aspect_question(Aspect aspect) noexcept;

struct AspectScore {
    Aspect aspect = Aspect::SPE;
    double score = 0.0;  // 100 * positive / n_evaluated, 2 decimals
    std::size_t n_evaluated = 0;
    std::size_t positive = 0;
    std::size_t excluded = 0;
    std::vector<std::string> excluded_ids;
};

// First whole-word "yes" or "no", case-insensitive.
std::optional<bool> parse_judgment(std::string_view reply);

double round2(double value);

std::vector<backend::ChatMessage> judge_messages(const Conversation& conv, Aspect aspect);

// Conversations whose reply has no yes/no are excluded and tallied; a
// BackendError aborts the run. At most `concurrency` calls are in flight.
AspectScore gptscore_evaluate(const std::vector<Conversation>& convs, Aspect aspect, backend::ChatBackend& backend,
                              std::size_t concurrency = 1);

// ---- splits ----------------------------------------------------------------

struct SplitSpec {
    double train = 0.70;
    double test = 0.20;
    double validation = 0.10;
    std::uint64_t seed = 0;

    void validate() const;
};

// Floor of each fraction, leftovers dealt train -> test -> validation.
std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitSpec& spec);

struct DatasetSplit {
    std::vector<Conversation> train;
    std::vector<Conversation> test;
    std::vector<Conversation> validation;
};

// Stratified by department: every (department, split) count is the floor or
// ceiling of its proportional share, and split sizes match split_sizes().
// Each split keeps input order.
DatasetSplit split_dataset(const std::vector<Conversation>& convs, const SplitSpec& spec);

// ---- department classification --------------------------------------------

using LabeledSet = std::vector<std::pair<Conversation, Department>>;

// Pairs each conversation with its own department label; unlabeled ones are skipped.
LabeledSet labeled(const std::vector<Conversation>& convs);

// Lowercase, split on anything that is not a letter or digit.
std::vector<std::string> tokenize(std::string_view text);

struct FeatureOptions {
    // Keep Assistant turns that name a known department (leaks the label).
    bool include_recommendation_turn = false;

    friend bool operator==(const FeatureOptions&, const FeatureOptions&) = default;
};

std::vector<std::string> conversation_features(const Conversation& conv, const DepartmentSet& departments,
                                               const FeatureOptions& options);

// Multinomial naive Bayes over bag-of-words with add-one smoothing.
class NaiveBayesClassifier {
public:
    static NaiveBayesClassifier train(const LabeledSet& examples, FeatureOptions options = {});

    // Unnormalized log P(c) + sum log P(w|c); words outside the vocabulary are ignored.
    std::map<Department, double> log_joint(const std::vector<std::string>& tokens) const;
    std::map<Department, double> posterior(const std::vector<std::string>& tokens) const;
    std::vector<std::string> features(const Conversation& conv) const;

    // Ties go to the lexicographically smallest department.
    Department predict(const Conversation& conv) const;

    const DepartmentSet& classes() const noexcept { return classes_; }
    std::size_t vocabulary_size() const noexcept { return vocabulary_.size(); }
    const std::map<Department, std::size_t>& document_counts() const noexcept { return doc_counts_; }
    const std::map<Department, std::map<std::string, std::size_t>>& word_counts() const noexcept { return word_counts_; }

    friend bool operator==(const NaiveBayesClassifier&, const NaiveBayesClassifier&) = default;

private:
    FeatureOptions options_;
    DepartmentSet classes_;
    std::map<std::string, std::size_t> vocabulary_;
    std::map<Department, std::size_t> doc_counts_;
    std::map<Department, std::map<std::string, std::size_t>> word_counts_;
    std::map<Department, std::size_t> total_words_;
    std::size_t total_docs_ = 0;
};

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
};

struct EvalMetrics {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    std::size_t total = 0;
    std::map<Department, ClassMetrics> per_department;
};

// (truth, prediction) pairs; classes are the union of both label sets.
EvalMetrics compute_metrics(const std::vector<std::pair<Department, Department>>& outcomes);

EvalMetrics evaluate_classifier(const NaiveBayesClassifier& model, const LabeledSet& test);

// CSV `conversation_id,predicted_department`, optional header row.
std::map<std::string, Department> read_predictions(std::istream& in);
// Throws PreconditionViolation if a labeled conversation has no prediction.
EvalMetrics evaluate_predictions(const LabeledSet& test, const std::map<std::string, Department>& predictions);

// ---- dataset statistics ----------------------------------------------------

struct DistributionSummary {
    std::size_t min = 0;
    std::size_t p50 = 0;
    std::size_t p95 = 0;
    std::size_t max = 0;
    double mean = 0.0;
};

// Nearest-rank percentiles.
DistributionSummary summarize_distribution(std::vector<std::size_t> values);

struct DatasetStats {
    std::size_t conversations = 0;
    std::size_t token_bucket_width = 100;
    std::map<std::size_t, std::size_t> turn_histogram;
    std::map<std::size_t, std::size_t> token_histogram;  // key = bucket lower bound
    std::map<Department, DistributionSummary> per_department_turns;
    std::map<Department, DistributionSummary> per_department_tokens;
    std::map<Department, std::size_t> department_counts;
};

std::size_t conversation_tokens(const Conversation& conv);

DatasetStats compute_stats(const std::vector<Conversation>& convs, std::size_t token_bucket_width = 100);

nlohmann::json to_json(const EvalMetrics& m);
nlohmann::json to_json(const AspectScore& s);
nlohmann::json to_json(const DatasetStats& s);

}  // namespace triage::eval
