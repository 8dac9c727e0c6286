#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "triage/backend.hpp"
#include "triage/core.hpp"

namespace triage::history {

// Model-agnostic token estimate: whitespace-delimited words plus each
// punctuation mark stripped from a word's edges ("headache." is 2).
// Additive over whitespace concatenation.
std::size_t approx_tokens(std::string_view text);

// Plug-in point for an exact tokenizer. All budget logic goes through this.
using TokenCounter = std::function<std::size_t(std::string_view)>;

struct TokenBudget {
    std::size_t max_tokens = 1024;
    std::size_t reserve_for_reply = 256;

    void validate() const;
    std::size_t prompt_limit() const noexcept { return max_tokens - reserve_for_reply; }
};

inline constexpr std::size_t kDefaultRecentTurns = 12;
inline constexpr std::size_t kDefaultSummaryCap = 128;

struct PrunedContext {
    std::optional<DialogueTurn> summary_turn;
    std::vector<DialogueTurn> retained_turns;  // contiguous suffix of the source history
    std::size_t dropped_count = 0;
    TokenBudget budget;
};

struct PruneOptions {
    // Tokens already committed elsewhere in the prompt (preamble, summary).
    std::size_t fixed_overhead_tokens = 0;
    TokenCounter counter = approx_tokens;
};

// Keeps the last min(n_recent, |history|) turns, then drops the oldest kept
// turn until the assembled prompt fits. The final turn is never dropped;
// BudgetImpossible if it alone does not fit.
PrunedContext prune_window(std::span<const DialogueTurn> history, const TokenBudget& budget,
                           std::size_t n_recent = kDefaultRecentTurns, const PruneOptions& options = {});

// Turn text with newlines flattened and embedded role tags neutralised, so a
// patient cannot forge "[Assistant]" lines.
std::string sanitize_turn_text(std::string_view text);
// "<RoleTag> text"
std::string render_turn_line(const DialogueTurn& turn);

// Preamble, optional "[System]" summary line, one line per retained turn,
// then a bare "[Assistant]" cue. Rechecks the budget.
std::string assemble_prompt(std::string_view system_preamble, const PrunedContext& ctx,
                            const TokenCounter& counter = approx_tokens);

// Longest prefix ending at '.', '!' or '?' within `cap` tokens; falls back to
// whole words when no sentence boundary fits.
std::string truncate_to_sentence(std::string_view text, std::size_t cap,
                                 const TokenCounter& counter = approx_tokens);

DialogueTurn summarize_dropped(std::span<const DialogueTurn> history_prefix, backend::ChatBackend& backend,
                               std::size_t cap = kDefaultSummaryCap, const TokenCounter& counter = approx_tokens);

struct ContextOptions {
    std::size_t n_recent = kDefaultRecentTurns;
    bool summarize = true;
    std::size_t summary_cap = kDefaultSummaryCap;
    TokenCounter counter = approx_tokens;
};

// Prune + optional summary of the dropped prefix, sized so the prompt with
// `system_preamble` stays within budget. `summarizer` may be null.
PrunedContext build_context(std::span<const DialogueTurn> history, const TokenBudget& budget,
                            std::string_view system_preamble, backend::ChatBackend* summarizer,
                            const ContextOptions& options = {});

// Chat messages equivalent to assemble_prompt (without the cue): preamble as
// System, summary as System, then one tagged message per retained turn.
std::vector<backend::ChatMessage> to_chat_messages(std::string_view system_preamble, const PrunedContext& ctx);

}  // namespace triage::history
