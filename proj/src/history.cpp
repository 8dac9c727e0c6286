#include "triage/history.hpp"

#include <algorithm>
#include <cctype>

#include "triage/errors.hpp"
#include "triage/text.hpp"

namespace triage::history {

namespace {

bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; }
bool is_space(unsigned char c) { return std::isspace(c) != 0; }

std::size_t chunk_tokens(std::string_view chunk) {
    std::size_t b = 0;
    std::size_t e = chunk.size();
    std::size_t punct = 0;
    while (b < e && is_punct(static_cast<unsigned char>(chunk[b]))) {
        ++b;
        ++punct;
    }
    while (e > b && is_punct(static_cast<unsigned char>(chunk[e - 1]))) {
        --e;
        ++punct;
    }
    return punct + (e > b ? 1 : 0);
}

std::size_t cue_tokens(const TokenCounter& counter) { return counter(canonical_tag(SpeakerRole::Assistant)); }

}  // namespace

std::size_t approx_tokens(std::string_view text) {
    std::size_t total = 0;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t start = i;
        while (i < text.size() && !is_space(static_cast<unsigned char>(text[i]))) ++i;
        if (i > start) total += chunk_tokens(text.substr(start, i - start));
    }
    return total;
}

void TokenBudget::validate() const {
    if (reserve_for_reply == 0 || reserve_for_reply >= max_tokens) {
        throw PreconditionViolation("token budget needs 0 < reserve_for_reply < max_tokens");
    }
}

std::string sanitize_turn_text(std::string_view raw) {
    std::string out(raw);
    for (auto& c : out) {
        if (c == '\n' || c == '\r') c = ' ';
    }
    for (auto role : {SpeakerRole::Patient, SpeakerRole::Assistant, SpeakerRole::System}) {
        const auto tag = canonical_tag(role);
        const auto lower_tag = text::to_lower(tag);
        std::size_t pos = text::to_lower(out).find(lower_tag);
        while (pos != std::string::npos) {
            out[pos] = '(';
            out[pos + tag.size() - 1] = ')';
            pos = text::to_lower(out).find(lower_tag, pos + 1);
        }
    }
    return out;
}

std::string render_turn_line(const DialogueTurn& turn) {
    std::string line(canonical_tag(turn.role));
    line.push_back(' ');
    line += sanitize_turn_text(turn.text);
    return line;
}

PrunedContext prune_window(std::span<const DialogueTurn> history, const TokenBudget& budget, std::size_t n_recent,
                           const PruneOptions& options) {
    budget.validate();
    if (n_recent < 2) throw PreconditionViolation("n_recent must be at least 2");
    PrunedContext ctx;
    ctx.budget = budget;
    if (history.empty()) return ctx;

    const std::size_t limit = budget.prompt_limit();
    const std::size_t fixed = options.fixed_overhead_tokens + cue_tokens(options.counter);
    const std::size_t keep_max = std::min(n_recent, history.size());

    std::vector<std::size_t> cost(keep_max);
    for (std::size_t k = 0; k < keep_max; ++k) {
        cost[k] = options.counter(render_turn_line(history[history.size() - keep_max + k]));
    }
    if (fixed + cost.back() > limit) {
        throw BudgetImpossible("final turn needs " + std::to_string(fixed + cost.back()) +
                               " tokens but the prompt limit is " + std::to_string(limit));
    }
    std::size_t total = fixed;
    for (auto c : cost) total += c;
    std::size_t first = 0;
    while (total > limit) total -= cost[first++];

    const std::size_t start = history.size() - keep_max + first;
    ctx.retained_turns.assign(history.begin() + static_cast<std::ptrdiff_t>(start), history.end());
    ctx.dropped_count = start;
    return ctx;
}

std::string assemble_prompt(std::string_view system_preamble, const PrunedContext& ctx, const TokenCounter& counter) {
    std::vector<std::string> lines;
    if (!text::is_blank(system_preamble)) lines.emplace_back(system_preamble);
    if (ctx.summary_turn) {
        DialogueTurn s = *ctx.summary_turn;
        s.role = SpeakerRole::System;
        lines.push_back(render_turn_line(s));
    }
    for (const auto& t : ctx.retained_turns) lines.push_back(render_turn_line(t));
    lines.emplace_back(canonical_tag(SpeakerRole::Assistant));
    auto prompt = text::join(lines, "\n");
    const auto used = counter(prompt);
    if (used > ctx.budget.prompt_limit()) {
        throw BudgetImpossible("assembled prompt needs " + std::to_string(used) + " tokens but the limit is " +
                               std::to_string(ctx.budget.prompt_limit()));
    }
    return prompt;
}

std::string truncate_to_sentence(std::string_view raw, std::size_t cap, const TokenCounter& counter) {
    const std::string s = text::trim(raw);
    if (counter(s) <= cap) return s;
    std::string best;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if (c != '.' && c != '!' && c != '?') continue;
        if (i + 1 < s.size() && !is_space(static_cast<unsigned char>(s[i + 1]))) continue;
        auto prefix = s.substr(0, i + 1);
        if (counter(prefix) > cap) break;
        best = std::move(prefix);
    }
    if (!best.empty()) return best;
    // No sentence fits: keep whole words.
    std::string out;
    for (const auto& w : text::split(text::collapse_whitespace(s), ' ')) {
        std::string candidate = out.empty() ? w : out + " " + w;
        if (counter(candidate) > cap) break;
        out = std::move(candidate);
    }
    return out;
}

DialogueTurn summarize_dropped(std::span<const DialogueTurn> history_prefix, backend::ChatBackend& backend,
                               std::size_t cap, const TokenCounter& counter) {
    if (history_prefix.empty()) throw PreconditionViolation("summarize_dropped needs a non-empty history prefix");
    std::vector<std::string> lines;
    for (const auto& t : history_prefix) lines.push_back(render_turn_line(t));
    const std::vector<backend::ChatMessage> messages = {
        {SpeakerRole::System,
         "Condense the earlier part of this patient triage conversation into a short neutral note. Keep "
         "symptoms, durations, severity and relevant history. Use at most " +
             std::to_string(cap) + " words."},
        {SpeakerRole::Patient, text::join(lines, "\n")},
    };
    auto summary = truncate_to_sentence(backend.chat(messages), cap, counter);
    if (text::is_blank(summary)) throw BackendError(false, 0, "summarizer returned no usable text");
    return {SpeakerRole::System, std::move(summary), 0};
}

PrunedContext build_context(std::span<const DialogueTurn> history, const TokenBudget& budget,
                            std::string_view system_preamble, backend::ChatBackend* summarizer,
                            const ContextOptions& options) {
    const std::size_t preamble_tokens = options.counter(system_preamble);
    PruneOptions prune{preamble_tokens, options.counter};
    auto ctx = prune_window(history, budget, options.n_recent, prune);
    if (ctx.dropped_count == 0 || !options.summarize || summarizer == nullptr) return ctx;

    // Reserve room for the worst-case summary line, then summarize whatever
    // that prune dropped.
    prune.fixed_overhead_tokens = preamble_tokens + options.summary_cap + options.counter(canonical_tag(SpeakerRole::System));
    try {
        ctx = prune_window(history, budget, options.n_recent, prune);
    } catch (const BudgetImpossible&) {
        return ctx;  // no room for a summary; plain pruning still fits
    }
    ctx.summary_turn = summarize_dropped(history.first(ctx.dropped_count), *summarizer, options.summary_cap,
                                         options.counter);
    return ctx;
}

std::vector<backend::ChatMessage> to_chat_messages(std::string_view system_preamble, const PrunedContext& ctx) {
    std::vector<backend::ChatMessage> out;
    if (!text::is_blank(system_preamble)) out.push_back({SpeakerRole::System, std::string(system_preamble)});
    if (ctx.summary_turn) {
        DialogueTurn s = *ctx.summary_turn;
        s.role = SpeakerRole::System;
        out.push_back({SpeakerRole::System, render_turn_line(s)});
    }
    for (const auto& t : ctx.retained_turns) out.push_back({t.role, render_turn_line(t)});
    return out;
}

}  // namespace triage::history
