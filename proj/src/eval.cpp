#include "triage/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <exception>
#include <istream>
#include <mutex>
#include <numeric>
#include <queue>
#include <thread>

#include "triage/errors.hpp"
#include "triage/history.hpp"
#include "triage/random.hpp"
#include "triage/text.hpp"

namespace triage::eval {

using nlohmann::json;

// ---- judging ---------------------------------------------------------------

std::string_view aspect_name(Aspect aspect) noexcept {
    switch (aspect) {
        case Aspect::SPE: return "SPE";
        case Aspect::FLE: return "FLE";
        case Aspect::UND: return "UND";
        case Aspect::INF: return "INF";
        case Aspect::PAT: return "PAT";
        case Aspect::ACC: return "ACC";
    }
    return "SPE";
}

std::optional<Aspect> parse_aspect(std::string_view name) {
    for (auto a : {Aspect::SPE, Aspect::FLE, Aspect::UND, Aspect::INF, Aspect::PAT, Aspect::ACC}) {
        if (text::iequals(name, aspect_name(a))) return a;
    }
    return std::nullopt;
}

std::string_view aspect_question(Aspect aspect) noexcept {
    switch (aspect) {
        case Aspect::SPE:
            return "Are the responses of the Conversational Patient Navigator specific enough to the context rather "
                   "than generic?";
        case Aspect::FLE:
            return "Is the Conversational Patient Navigator flexible and adaptive to individual patient interests "
                   "and responses?";
        case Aspect::UND:
            return "Does the Conversational Patient Navigator clearly communicate information in a way easily "
                   "understood by patients?";
        case Aspect::INF:
            return "Do the Conversational Patient Navigator's questions effectively gather sufficient information "
                   "to provide accurate recommendations?";
        case Aspect::PAT:
            return "Do the questions from the Conversational Patient Navigator potentially lead to patient "
                   "impatience?";
        case Aspect::ACC:
            return "Is the specialist recommended by the Conversational Patient Navigator accurately aligned with "
                   "the patient's needs?";
    }
    return "";
}

std::optional<bool> parse_judgment(std::string_view reply) {
    const auto yes = text::find_word_occurrences(reply, "yes");
    const auto no = text::find_word_occurrences(reply, "no");
    if (yes.empty() && no.empty()) return std::nullopt;
    if (no.empty()) return true;
    if (yes.empty()) return false;
    return yes.front() < no.front();
}

double round2(double value) { return std::round(value * 100.0) / 100.0; }

std::vector<backend::ChatMessage> judge_messages(const Conversation& conv, Aspect aspect) {
    std::vector<std::string> lines;
    for (const auto& t : conv.turns) lines.push_back(history::render_turn_line(t));
    return {
        {SpeakerRole::System,
         "You evaluate conversations between a patient and a Conversational Patient Navigator, an assistant "
         "that gathers symptoms and recommends a medical department. Answer the question with Yes or No."},
        {SpeakerRole::Patient, "Question: " + std::string(aspect_question(aspect)) + "\n\nConversation:\n" +
                                   text::join(lines, "\n") + "\n\nAnswer Yes or No."},
    };
}

AspectScore gptscore_evaluate(const std::vector<Conversation>& convs, Aspect aspect, backend::ChatBackend& backend,
                              std::size_t concurrency) {
    if (convs.empty()) throw PreconditionViolation("gptscore_evaluate needs at least one conversation");
    concurrency = std::clamp<std::size_t>(concurrency, 1, convs.size());

    std::vector<std::optional<bool>> judgments(convs.size());
    std::atomic<std::size_t> next{0};
    std::atomic<bool> abort{false};
    std::exception_ptr failure;
    std::mutex failure_mu;

    auto worker = [&] {
        while (!abort.load()) {
            const auto i = next.fetch_add(1);
            if (i >= convs.size()) return;
            try {
                const auto messages = judge_messages(convs[i], aspect);
                judgments[i] = parse_judgment(backend.chat(messages));
            } catch (...) {
                std::lock_guard lock(failure_mu);
                if (!failure) failure = std::current_exception();
                abort = true;
            }
        }
    };
    if (concurrency == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < concurrency; ++t) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);

    AspectScore score;
    score.aspect = aspect;
    for (std::size_t i = 0; i < convs.size(); ++i) {
        if (!judgments[i]) {
            ++score.excluded;
            score.excluded_ids.push_back(convs[i].id);
            continue;
        }
        ++score.n_evaluated;
        if (*judgments[i]) ++score.positive;
    }
    if (score.n_evaluated > 0) {
        score.score = round2(100.0 * static_cast<double>(score.positive) / static_cast<double>(score.n_evaluated));
    }
    return score;
}

// ---- splits ----------------------------------------------------------------

void SplitSpec::validate() const {
    if (train < 0 || test < 0 || validation < 0) throw PreconditionViolation("split fractions must be non-negative");
    if (std::abs(train + test + validation - 1.0) > 1e-9) throw PreconditionViolation("split fractions must sum to 1");
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitSpec& spec) {
    spec.validate();
    const std::array<double, 3> fractions = {spec.train, spec.test, spec.validation};
    std::array<std::size_t, 3> sizes{};
    std::size_t given = 0;
    for (std::size_t s = 0; s < 3; ++s) {
        sizes[s] = static_cast<std::size_t>(std::floor(static_cast<double>(n) * fractions[s] + 1e-9));
        given += sizes[s];
    }
    for (std::size_t s = 0; given < n; s = (s + 1) % 3) {
        if (fractions[s] > 0) {
            ++sizes[s];
            ++given;
        }
    }
    return sizes;
}

namespace {

// Integer max-flow (Edmonds-Karp) on a dense adjacency matrix; the graphs
// here have a handful of departments plus four fixed nodes.
class MaxFlow {
public:
    explicit MaxFlow(std::size_t n) : cap_(n, std::vector<long long>(n, 0)) {}

    void add_edge(std::size_t u, std::size_t v, long long c) { cap_[u][v] += c; }
    long long residual(std::size_t u, std::size_t v) const { return cap_[u][v]; }

    long long run(std::size_t source, std::size_t sink) {
        const std::size_t n = cap_.size();
        long long flow = 0;
        while (true) {
            std::vector<std::ptrdiff_t> parent(n, -1);
            parent[source] = static_cast<std::ptrdiff_t>(source);
            std::queue<std::size_t> q;
            q.push(source);
            while (!q.empty() && parent[sink] < 0) {
                const auto u = q.front();
                q.pop();
                for (std::size_t v = 0; v < n; ++v) {
                    if (parent[v] < 0 && cap_[u][v] > 0) {
                        parent[v] = static_cast<std::ptrdiff_t>(u);
                        q.push(v);
                    }
                }
            }
            if (parent[sink] < 0) return flow;
            long long push = std::numeric_limits<long long>::max();
            for (auto v = sink; v != source; v = static_cast<std::size_t>(parent[v])) {
                push = std::min(push, cap_[static_cast<std::size_t>(parent[v])][v]);
            }
            for (auto v = sink; v != source; v = static_cast<std::size_t>(parent[v])) {
                const auto u = static_cast<std::size_t>(parent[v]);
                cap_[u][v] -= push;
                cap_[v][u] += push;
            }
            flow += push;
        }
    }

private:
    std::vector<std::vector<long long>> cap_;
};

}  // namespace

DatasetSplit split_dataset(const std::vector<Conversation>& convs, const SplitSpec& spec) {
    if (convs.size() < 10) throw TooFewSamples(convs.size());
    const std::size_t n = convs.size();
    const auto totals = split_sizes(n, spec);

    std::map<std::string, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < n; ++i) strata[convs[i].department ? convs[i].department->name() : ""].push_back(i);

    // Controlled rounding of the (stratum x split) table of quotas
    // m_d * T_s / n: start from floors, then route the leftover units of
    // each stratum to splits with a fractional quota (one unit per cell).
    const std::size_t d_count = strata.size();
    std::vector<std::array<std::size_t, 3>> cells(d_count);
    std::vector<std::array<bool, 3>> fractional(d_count);
    std::array<long long, 3> column_need{};
    std::vector<long long> row_need(d_count);
    std::size_t d = 0;
    for (const auto& [_, members] : strata) {
        const std::size_t m = members.size();
        std::size_t floors = 0;
        for (std::size_t s = 0; s < 3; ++s) {
            const auto num = static_cast<unsigned long long>(m) * totals[s];
            cells[d][s] = static_cast<std::size_t>(num / n);
            fractional[d][s] = num % n != 0;
            floors += cells[d][s];
        }
        row_need[d] = static_cast<long long>(m - floors);
        ++d;
    }
    for (std::size_t s = 0; s < 3; ++s) {
        std::size_t floors = 0;
        for (std::size_t k = 0; k < d_count; ++k) floors += cells[k][s];
        column_need[s] = static_cast<long long>(totals[s] - floors);
    }
    const std::size_t source = d_count + 3;
    const std::size_t sink = source + 1;
    MaxFlow flow(d_count + 5);
    for (std::size_t k = 0; k < d_count; ++k) {
        flow.add_edge(source, k, row_need[k]);
        for (std::size_t s = 0; s < 3; ++s) {
            if (fractional[k][s]) flow.add_edge(k, d_count + s, 1);
        }
    }
    for (std::size_t s = 0; s < 3; ++s) flow.add_edge(d_count + s, sink, column_need[s]);
    const long long needed = std::accumulate(row_need.begin(), row_need.end(), 0LL);
    if (flow.run(source, sink) != needed) throw PreconditionViolation("no stratified split satisfies the split sizes");
    for (std::size_t k = 0; k < d_count; ++k) {
        for (std::size_t s = 0; s < 3; ++s) {
            if (fractional[k][s] && flow.residual(k, d_count + s) == 0) ++cells[k][s];
        }
    }

    std::array<std::vector<std::size_t>, 3> picked;
    rng::Engine eng(spec.seed);
    d = 0;
    for (const auto& [_, members] : strata) {
        auto order = members;
        rng::shuffle(order, eng);
        std::size_t pos = 0;
        for (std::size_t s = 0; s < 3; ++s) {
            for (std::size_t c = 0; c < cells[d][s]; ++c) picked[s].push_back(order[pos++]);
        }
        ++d;
    }
    DatasetSplit out;
    std::array<std::vector<Conversation>*, 3> targets = {&out.train, &out.test, &out.validation};
    for (std::size_t s = 0; s < 3; ++s) {
        std::sort(picked[s].begin(), picked[s].end());
        for (auto i : picked[s]) targets[s]->push_back(convs[i]);
    }
    return out;
}

// ---- classification --------------------------------------------------------

LabeledSet labeled(const std::vector<Conversation>& convs) {
    LabeledSet out;
    for (const auto& c : convs) {
        if (c.department) out.emplace_back(c, *c.department);
    }
    return out;
}

std::vector<std::string> tokenize(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        const auto u = static_cast<unsigned char>(ch);
        if (text::is_word_byte(u)) {
            cur.push_back(u < 0x80 ? static_cast<char>(std::tolower(u)) : ch);
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::vector<std::string> conversation_features(const Conversation& conv, const DepartmentSet& departments,
                                               const FeatureOptions& options) {
    std::vector<std::string> out;
    for (const auto& t : conv.turns) {
        if (!options.include_recommendation_turn && t.role == SpeakerRole::Assistant &&
            extract_department(t.text, departments)) {
            continue;
        }
        auto toks = tokenize(t.text);
        out.insert(out.end(), toks.begin(), toks.end());
    }
    return out;
}

NaiveBayesClassifier NaiveBayesClassifier::train(const LabeledSet& examples, FeatureOptions options) {
    std::vector<Department> labels;
    for (const auto& [_, d] : examples) labels.push_back(d);
    DepartmentSet classes(labels);
    if (classes.size() < 2) throw SingleClassTraining();

    NaiveBayesClassifier model;
    model.options_ = options;
    model.classes_ = classes;
    for (const auto& [conv, dept] : examples) {
        ++model.doc_counts_[dept];
        ++model.total_docs_;
        auto& counts = model.word_counts_[dept];
        for (const auto& tok : conversation_features(conv, classes, options)) {
            ++counts[tok];
            ++model.total_words_[dept];
            ++model.vocabulary_[tok];
        }
    }
    return model;
}

std::vector<std::string> NaiveBayesClassifier::features(const Conversation& conv) const {
    return conversation_features(conv, classes_, options_);
}

std::map<Department, double> NaiveBayesClassifier::log_joint(const std::vector<std::string>& tokens) const {
    const auto vocab = static_cast<double>(vocabulary_.size());
    std::map<Department, double> out;
    for (const auto& dept : classes_.items()) {
        const auto docs = doc_counts_.count(dept) ? doc_counts_.at(dept) : 0;
        double lp = std::log(static_cast<double>(docs) / static_cast<double>(total_docs_));
        const auto wc_it = word_counts_.find(dept);
        const auto tw_it = total_words_.find(dept);
        const double denom = static_cast<double>(tw_it == total_words_.end() ? 0 : tw_it->second) + vocab;
        for (const auto& tok : tokens) {
            if (!vocabulary_.contains(tok)) continue;
            std::size_t count = 0;
            if (wc_it != word_counts_.end()) {
                if (auto it = wc_it->second.find(tok); it != wc_it->second.end()) count = it->second;
            }
            lp += std::log((static_cast<double>(count) + 1.0) / denom);
        }
        out[dept] = lp;
    }
    return out;
}

std::map<Department, double> NaiveBayesClassifier::posterior(const std::vector<std::string>& tokens) const {
    auto lj = log_joint(tokens);
    double mx = -std::numeric_limits<double>::infinity();
    for (const auto& [_, v] : lj) mx = std::max(mx, v);
    double z = 0.0;
    for (const auto& [_, v] : lj) z += std::exp(v - mx);
    for (auto& [_, v] : lj) v = std::exp(v - mx) / z;
    return lj;
}

Department NaiveBayesClassifier::predict(const Conversation& conv) const {
    const auto lj = log_joint(features(conv));
    const Department* best = nullptr;
    double best_score = -std::numeric_limits<double>::infinity();
    for (const auto& [dept, score] : lj) {  // ascending name order, so strict > keeps the smallest on ties
        if (!best || score > best_score) {
            best = &dept;
            best_score = score;
        }
    }
    return *best;
}

EvalMetrics compute_metrics(const std::vector<std::pair<Department, Department>>& outcomes) {
    EvalMetrics m;
    m.total = outcomes.size();
    if (outcomes.empty()) return m;
    std::map<Department, std::size_t> tp, fp, fn, support;
    std::size_t correct = 0;
    for (const auto& [truth, pred] : outcomes) {
        tp[truth];
        tp[pred];
        ++support[truth];
        if (truth == pred) {
            ++tp[truth];
            ++correct;
        } else {
            ++fp[pred];
            ++fn[truth];
        }
    }
    m.accuracy = static_cast<double>(correct) / static_cast<double>(outcomes.size());
    double f1_sum = 0.0;
    for (const auto& [dept, t] : tp) {
        ClassMetrics c;
        const auto p_den = t + fp[dept];
        const auto r_den = t + fn[dept];
        c.precision = p_den ? static_cast<double>(t) / static_cast<double>(p_den) : 0.0;
        c.recall = r_den ? static_cast<double>(t) / static_cast<double>(r_den) : 0.0;
        c.f1 = (c.precision + c.recall) > 0 ? 2 * c.precision * c.recall / (c.precision + c.recall) : 0.0;
        c.support = support[dept];
        f1_sum += c.f1;
        m.per_department[dept] = c;
    }
    m.macro_f1 = f1_sum / static_cast<double>(m.per_department.size());
    return m;
}

EvalMetrics evaluate_classifier(const NaiveBayesClassifier& model, const LabeledSet& test) {
    if (test.empty()) throw PreconditionViolation("evaluation set is empty");
    std::vector<std::pair<Department, Department>> outcomes;
    outcomes.reserve(test.size());
    for (const auto& [conv, truth] : test) outcomes.emplace_back(truth, model.predict(conv));
    return compute_metrics(outcomes);
}

std::map<std::string, Department> read_predictions(std::istream& in) {
    std::map<std::string, Department> out;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (text::is_blank(line)) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw PreconditionViolation("predictions line without a comma: " + line);
        auto id = text::trim(line.substr(0, comma));
        auto dept = text::trim(line.substr(comma + 1));
        if (first && text::iequals(id, "conversation_id")) {
            first = false;
            continue;
        }
        first = false;
        out[id] = Department(dept);
    }
    return out;
}

EvalMetrics evaluate_predictions(const LabeledSet& test, const std::map<std::string, Department>& predictions) {
    if (test.empty()) throw PreconditionViolation("evaluation set is empty");
    std::vector<std::pair<Department, Department>> outcomes;
    for (const auto& [conv, truth] : test) {
        auto it = predictions.find(conv.id);
        if (it == predictions.end()) throw PreconditionViolation("no prediction for conversation " + conv.id);
        outcomes.emplace_back(truth, it->second);
    }
    return compute_metrics(outcomes);
}

// ---- statistics ------------------------------------------------------------

DistributionSummary summarize_distribution(std::vector<std::size_t> values) {
    DistributionSummary s;
    if (values.empty()) return s;
    std::sort(values.begin(), values.end());
    auto rank = [&](double p) {
        auto r = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(values.size())));
        return values[std::clamp<std::size_t>(r, 1, values.size()) - 1];
    };
    s.min = values.front();
    s.max = values.back();
    s.p50 = rank(50);
    s.p95 = rank(95);
    s.mean = static_cast<double>(std::accumulate(values.begin(), values.end(), std::size_t{0})) /
             static_cast<double>(values.size());
    return s;
}

std::size_t conversation_tokens(const Conversation& conv) {
    std::size_t total = 0;
    for (const auto& t : conv.turns) total += history::approx_tokens(t.text);
    return total;
}

DatasetStats compute_stats(const std::vector<Conversation>& convs, std::size_t token_bucket_width) {
    if (token_bucket_width == 0) throw PreconditionViolation("token bucket width must be positive");
    DatasetStats stats;
    stats.conversations = convs.size();
    stats.token_bucket_width = token_bucket_width;
    std::map<Department, std::vector<std::size_t>> turns_by_dept, tokens_by_dept;
    for (const auto& c : convs) {
        const auto turns = c.turns.size();
        const auto tokens = conversation_tokens(c);
        ++stats.turn_histogram[turns];
        ++stats.token_histogram[tokens / token_bucket_width * token_bucket_width];
        if (c.department) {
            turns_by_dept[*c.department].push_back(turns);
            tokens_by_dept[*c.department].push_back(tokens);
            ++stats.department_counts[*c.department];
        }
    }
    for (auto& [d, v] : turns_by_dept) stats.per_department_turns[d] = summarize_distribution(std::move(v));
    for (auto& [d, v] : tokens_by_dept) stats.per_department_tokens[d] = summarize_distribution(std::move(v));
    return stats;
}

// ---- reports ---------------------------------------------------------------

namespace {

json to_json(const DistributionSummary& s) {
    return {{"min", s.min}, {"p50", s.p50}, {"p95", s.p95}, {"max", s.max}, {"mean", s.mean}};
}

template <typename K>
json histogram_rows(const std::map<K, std::size_t>& h) {
    json rows = json::array();
    for (const auto& [k, v] : h) rows.push_back({k, v});
    return rows;
}

}  // namespace

json to_json(const EvalMetrics& m) {
    json per = json::object();
    for (const auto& [d, c] : m.per_department) {
        per[d.name()] = {{"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}, {"support", c.support}};
    }
    return {{"accuracy", m.accuracy}, {"macro_f1", m.macro_f1}, {"total", m.total}, {"per_department", per}};
}

json to_json(const AspectScore& s) {
    return {{"aspect", aspect_name(s.aspect)}, {"score", s.score},       {"n_evaluated", s.n_evaluated},
            {"positive", s.positive},           {"excluded", s.excluded}, {"excluded_ids", s.excluded_ids}};
}

json to_json(const DatasetStats& s) {
    json turns = json::object();
    json tokens = json::object();
    json counts = json::object();
    for (const auto& [d, v] : s.per_department_turns) turns[d.name()] = to_json(v);
    for (const auto& [d, v] : s.per_department_tokens) tokens[d.name()] = to_json(v);
    for (const auto& [d, v] : s.department_counts) counts[d.name()] = v;
    return {{"conversations", s.conversations},
            {"token_bucket_width", s.token_bucket_width},
            {"turn_histogram", histogram_rows(s.turn_histogram)},
            {"token_histogram", histogram_rows(s.token_histogram)},
            {"department_counts", counts},
            {"per_department_turns", turns},
            {"per_department_tokens", tokens}};
}

}  // namespace triage::eval
