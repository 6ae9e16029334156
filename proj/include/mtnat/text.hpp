#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mtnat/errors.hpp"

namespace mtnat::text {

// Aligned source/target sentence pairs, whitespace tokenized, one sentence per
// string. Provenance distinguishes raw data from teacher-distilled data.
struct ParallelCorpus {
    enum class Provenance { Raw, Distilled };
    std::vector<std::pair<std::string, std::string>> pairs;
    Provenance provenance = Provenance::Raw;
};

enum class ToyTask { Copy, Reverse, Lexicon };

// Synthetic stand-in for real translation data. The lexicon task applies a
// bijective word substitution and then swaps each adjacent token pair
// (positions 0<->1, 2<->3, ...), so the mapping is not position-wise trivial.
struct ToyTaskSpec {
    ToyTask kind = ToyTask::Copy;
    std::size_t vocab_size = 50;
    std::size_t min_len = 3;
    std::size_t max_len = 10;
    std::uint64_t seed = 0;
    // Lexicon map; when empty it is derived from the seed as a permutation of
    // the source vocabulary. A supplied map must be a total bijection.
    std::map<std::string, std::string> lexicon;
};

// The pseudo-word list used by the toy tasks ("baka", "bixo", ...).
std::vector<std::string> toy_vocab_words(std::size_t vocab_size);

ParallelCorpus generate_toy_corpus(const ToyTaskSpec& spec, std::size_t n);

// Applies the toy task's target rule to one source sentence.
std::string toy_target_for(const ToyTaskSpec& spec, const std::string& source);

// --- BPE ---------------------------------------------------------------

struct BpeModel {
    std::vector<std::pair<std::string, std::string>> merges;  // order significant
};

// Greedy most-frequent adjacent pair merging over word-internal symbols,
// "</w>" appended to each word's final symbol. Ties break on the
// lexicographically smaller pair.
BpeModel learn_bpe(const std::vector<std::string>& sentences, std::size_t num_merges);

std::vector<std::string> bpe_word_symbols(const std::string& word);
std::vector<std::string> apply_bpe(const BpeModel& model, const std::string& sentence);
std::string debpe(const std::vector<std::string>& tokens);

void save_bpe(const BpeModel& model, const std::string& path);
BpeModel load_bpe(const std::string& path);

// --- vocabulary ----------------------------------------------------------

struct Vocabulary {
    static constexpr std::int32_t PAD = 0;
    static constexpr std::int32_t BOS = 1;
    static constexpr std::int32_t EOS = 2;
    static constexpr std::int32_t UNK = 3;
    static constexpr std::int32_t MASK = 4;

    std::vector<std::string> tokens;  // index == id, reserved tokens first
    std::unordered_map<std::string, std::int32_t> index;
    bool has_mask = true;

    std::size_t size() const { return tokens.size(); }
    std::int32_t id(const std::string& token) const;
    const std::string& token(std::int32_t id) const;
    std::size_t reserved_count() const { return has_mask ? 5 : 4; }

    // Joint vocabulary over already-BPE-tokenized sentences, ordered by
    // descending frequency then token text. nat_capable adds the MASK token.
    static Vocabulary build(const std::vector<std::vector<std::string>>& tokenized,
                            bool nat_capable = true);
};

void save_vocab(const Vocabulary& vocab, const std::string& path);
Vocabulary load_vocab(const std::string& path);

// --- batching --------------------------------------------------------------

struct TokenizedPair {
    std::vector<std::int32_t> src;
    std::vector<std::int32_t> tgt;
};

std::vector<TokenizedPair> tokenize_corpus(const ParallelCorpus& corpus, const BpeModel& bpe,
                                           const Vocabulary& vocab);

// One padded batch. tgt holds the raw target tokens (no BOS/EOS); the AT
// teacher-forcing views are PAD-extended to width T+1 with BOS prepended
// (at_in) and EOS appended (at_out).
struct Batch {
    std::size_t batch_size = 0;
    std::size_t src_len = 0;  // S
    std::size_t tgt_len = 0;  // T
    std::vector<std::int32_t> src;       // B x S
    std::vector<std::uint8_t> src_pad;   // B x S, true exactly at PAD
    std::vector<std::int32_t> tgt;       // B x T
    std::vector<std::uint8_t> tgt_pad;   // B x T
    std::vector<std::int32_t> at_in;     // B x (T+1)
    std::vector<std::int32_t> at_out;    // B x (T+1)
    std::vector<std::size_t> gold_len;   // per example, == non-PAD count of tgt row
};

struct BatchPlan {
    std::vector<Batch> batches;
    std::size_t skipped = 0;  // pairs dropped for exceeding max_len
};

BatchPlan build_batches(const std::vector<TokenizedPair>& pairs, const Vocabulary& vocab,
                        std::size_t batch_size, std::size_t max_len, std::uint64_t seed);

// Convenience wrapper matching the corpus-level contract.
BatchPlan build_batches(const ParallelCorpus& corpus, const BpeModel& bpe,
                        const Vocabulary& vocab, std::size_t batch_size, std::size_t max_len,
                        std::uint64_t seed);

// --- corpus files ------------------------------------------------------------

// <prefix>.src / <prefix>.tgt, UTF-8, one sentence per line, equal line counts.
void save_corpus(const ParallelCorpus& corpus, const std::string& prefix);
ParallelCorpus load_corpus(const std::string& prefix);

std::vector<std::string> split_ws(const std::string& s);
std::string join_ws(const std::vector<std::string>& tokens);

}  // namespace mtnat::text
