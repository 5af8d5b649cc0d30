#pragma once

#include "aen/core.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace aen {

/// Per-token embedding rows plus an attention mask. Rows whose mask byte is
/// zero are padding and are ignored by pooling and KDE construction.
///
/// When the matrix came out of a ToyEncoder, source_rows records the encoder
/// table row behind each token so gradients can be scattered back into the
/// table. It stays empty for file- or service-provided embeddings, which
/// makes those inputs head-only trainable.
struct TokenEmbeddings {
    Matrix matrix;                          // token_count x dim
    std::vector<std::uint8_t> mask;         // token_count entries, nonzero = attended
    std::vector<std::uint32_t> source_rows; // empty unless toy-encoded

    std::size_t token_count() const { return matrix.rows; }
    std::size_t dim() const { return matrix.cols; }
    std::size_t attended_count() const;
    std::vector<std::size_t> attended_indices() const;

    /// Throws std::invalid_argument on shape/finiteness violations.
    void validate() const;
};

/// Mean over attended rows only. Throws std::domain_error when nothing is
/// attended.
Vector mean_pool(const TokenEmbeddings& tokens);

/// Deterministic trainable stand-in for a sentence encoder: a hashed
/// embedding table. Tokenization is lowercase whitespace splitting; each
/// token selects a table row via FNV-1a 64 mod vocab_size.
///
/// The table is initialized from `seed` with splitmix64 feeding Box-Muller
/// (see SplitMix64::next_normal), scaled to std 0.02, filled row-major.
/// Identical (seed, vocab_size, dim) always produce an identical table.
struct ToyEncoder {
    std::uint32_t vocab_size = 4096;
    std::uint32_t dim = 0;
    std::uint64_t seed = 0;
    Matrix table; // vocab_size x dim

    static ToyEncoder make(std::uint32_t vocab_size, std::uint32_t dim, std::uint64_t seed);
};

/// Lowercase + whitespace split. No subword handling.
std::vector<std::string> toy_tokenize(std::string_view text);

/// Table row index for one (already lowercased) token.
std::uint32_t toy_token_row(const ToyEncoder& encoder, std::string_view token);

/// Encode text with the toy encoder. All tokens attended. Throws
/// std::domain_error for text that is empty after tokenization.
TokenEmbeddings toy_encode(const ToyEncoder& encoder, std::string_view text);

// Embedding file format ("AENE"):
//   magic "AENE", version u16 LE = 1, dim u32 LE, token_count u32 LE,
//   token_count*dim float32 LE row-major, token_count mask bytes (0/1).
// Values are stored in 32-bit precision; computation stays in 64-bit.
void write_embeddings(const std::filesystem::path& path, const TokenEmbeddings& tokens);
TokenEmbeddings read_embeddings(const std::filesystem::path& path);

void write_embeddings_stream(std::ostream& out, const TokenEmbeddings& tokens);
TokenEmbeddings read_embeddings_stream(std::istream& in);

} // namespace aen
