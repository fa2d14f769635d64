#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "storylogic/codec.hpp"
#include "storylogic/story.hpp"

namespace storylogic {

// ---------------------------------------------------------------------------
// Classification

struct ClassCounts {
    std::uint64_t true_positive = 0;
    std::uint64_t false_positive = 0;
    std::uint64_t false_negative = 0;

    ClassCounts& operator+=(const ClassCounts& other) noexcept;
    friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

// Per-class counts keyed by an integer class id (a verdict value or a label's
// wheel position). Tallies form a commutative monoid under +.
class ConfusionTally {
public:
    // Declares a class so it is reported even with zero counts.
    void declare(int cls) { counts_[cls]; }

    // One single-label decision.
    void add(int gold, int predicted);

    void add_counts(int cls, const ClassCounts& counts) { counts_[cls] += counts; }

    const std::map<int, ClassCounts>& classes() const noexcept { return counts_; }
    ClassCounts counts(int cls) const;

    ConfusionTally& operator+=(const ConfusionTally& other);
    friend ConfusionTally operator+(ConfusionTally a, const ConfusionTally& b) { return a += b; }
    friend bool operator==(const ConfusionTally&, const ConfusionTally&) = default;

private:
    std::map<int, ClassCounts> counts_;
};

struct PRF {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

PRF prf_from_counts(const ClassCounts& counts) noexcept;

// Pooled TP/FP/FN over every class not in `exclude`; 0/0 is 0.
PRF micro_prf(const ConfusionTally& tally, const std::set<int>& exclude = {});

// Unweighted mean of per-class P, R and F1 over classes not in `exclude`.
PRF macro_prf(const ConfusionTally& tally, const std::set<int>& exclude = {});

struct VerdictReport {
    std::size_t count = 0;
    ConfusionTally tally;
    std::map<int, PRF> per_class;  // keyed by verdict value (-1, 2, 3, ...)
    PRF micro;
    PRF macro;
};

// Pairs are (gold, predicted). Each distinct verdict value is a class.
VerdictReport verdict_report(const std::vector<std::pair<GapVerdict, GapVerdict>>& pairs);

struct EmotionReport {
    std::size_t count = 0;
    ConfusionTally tally;
    std::map<EmotionLabel, PRF> per_label;
    PRF micro;                    // `none` excluded unless include_none
    double affected_accuracy = 0.0;
    bool include_none = false;
};

// Pairs are (gold, predicted) cells.
EmotionReport emotion_report(const std::vector<std::pair<EmotionAnnotation, EmotionAnnotation>>& pairs,
                             bool include_none = false);

// ---------------------------------------------------------------------------
// Text overlap

inline constexpr std::string_view kTokenizerVersion = "v1";

// Lower-cases, isolates every ASCII punctuation character as its own token and
// splits on whitespace.
std::vector<std::string> tokenize(std::string_view text);

inline constexpr double kBleuEpsilon = 1e-9;

// Clipped n-gram statistics of one candidate, summable across a corpus.
struct BleuStats {
    std::array<std::uint64_t, 4> matched{};
    std::array<std::uint64_t, 4> total{};
    std::uint64_t candidate_length = 0;
    std::uint64_t reference_length = 0;

    BleuStats& operator+=(const BleuStats& other) noexcept;
};

BleuStats bleu_stats(const std::vector<std::string>& candidate,
                     const std::vector<std::vector<std::string>>& references);

// Score in [0, 100] from accumulated statistics, uniform weights up to max_n.
double bleu_from_stats(const BleuStats& stats, int max_n);

// Sentence BLEU in [0, 100]; max_n in 1..4. An empty candidate scores 0 and
// sets *warning when given.
double bleu(std::string_view candidate, const std::vector<std::string>& references, int max_n,
            std::string* warning = nullptr);

enum class RougeVariant { rouge1, rouge2, rougeL };

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b);

// P, R, F1 in [0, 1]. Empty input on either side yields zeros and sets *warning.
PRF rouge(std::string_view candidate, std::string_view reference, RougeVariant variant,
          std::string* warning = nullptr);
PRF rouge_tokens(const std::vector<std::string>& candidate, const std::vector<std::string>& reference,
                 RougeVariant variant);

// ---------------------------------------------------------------------------
// Lexicon deviation

enum VadDimension : std::size_t { kValence = 0, kArousal, kDominance, kAoA, kConcreteness };

using VadValues = std::array<double, 5>;

class VadLexicon {
public:
    VadLexicon() = default;
    explicit VadLexicon(std::unordered_map<std::string, VadValues> entries);

    // `word<TAB>V<TAB>A<TAB>D<TAB>AoA<TAB>Con` with a header line. Throws
    // CorpusError on malformed rows or values outside [0, 1].
    static VadLexicon load(const std::string& path);
    static VadLexicon parse(std::string_view text);

    const VadValues* find(std::string_view word) const;
    std::size_t size() const noexcept { return entries_.size(); }

    // Mean over tokens found in the lexicon; nullopt when none match.
    std::optional<VadValues> profile(std::string_view sentence) const;

private:
    std::unordered_map<std::string, VadValues> entries_;
};

// Columns V, A, D, MEAN, AoA, Con. A column is missing when either sentence
// has no lexicon hit.
struct VadDeviation {
    static constexpr std::array<std::string_view, 6> kColumns{"V", "A", "D", "MEAN", "AoA", "Con"};
    std::array<std::optional<double>, 6> values;
};

VadDeviation vad_deviation(std::string_view candidate, std::string_view reference, const VadLexicon& lexicon);

// Column means over instances, skipping missing values.
struct VadAggregate {
    std::array<double, 6> sum{};
    std::array<std::size_t, 6> count{};

    void add(const VadDeviation& deviation);
    std::array<std::optional<double>, 6> mean() const;
};

// ---------------------------------------------------------------------------
// Corpus generation scores

struct GenerationScores {
    std::size_t count = 0;
    // Sentence-averaged.
    double bleu1 = 0, bleu2 = 0, bleu4 = 0;
    PRF rouge1, rouge2, rougeL;
    // Pooled statistics.
    double corpus_bleu1 = 0, corpus_bleu2 = 0, corpus_bleu4 = 0;
    std::optional<std::array<std::optional<double>, 6>> vad;
    std::vector<std::string> warnings;
};

// Accumulates (candidate, reference) pairs.
class GenerationEvaluator {
public:
    explicit GenerationEvaluator(const VadLexicon* lexicon = nullptr) : lexicon_(lexicon) {}

    void add(std::string_view candidate, std::string_view reference);
    GenerationScores finish() const;

private:
    const VadLexicon* lexicon_;
    std::size_t count_ = 0;
    std::array<double, 3> bleu_sum_{};
    std::array<PRF, 3> rouge_sum_{};
    BleuStats pooled_;
    VadAggregate vad_;
    std::vector<std::string> warnings_;
};

} // namespace storylogic
