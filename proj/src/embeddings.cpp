#include "aen/embeddings.hpp"

#include "aen/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace aen {

std::size_t TokenEmbeddings::attended_count() const {
    std::size_t n = 0;
    for (auto m : mask) {
        if (m != 0) ++n;
    }
    return n;
}

std::vector<std::size_t> TokenEmbeddings::attended_indices() const {
    std::vector<std::size_t> idx;
    idx.reserve(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] != 0) idx.push_back(i);
    }
    return idx;
}

void TokenEmbeddings::validate() const {
    if (matrix.rows != mask.size()) {
        throw std::invalid_argument("token embeddings: mask length " + std::to_string(mask.size()) +
                                    " does not match row count " + std::to_string(matrix.rows));
    }
    if (!source_rows.empty() && source_rows.size() != matrix.rows) {
        throw std::invalid_argument("token embeddings: source_rows length does not match row count");
    }
    if (!matrix.all_finite()) {
        throw std::invalid_argument("token embeddings: non-finite value in matrix");
    }
}

Vector mean_pool(const TokenEmbeddings& tokens) {
    tokens.validate();
    const std::size_t dim = tokens.dim();
    Vector out(dim, 0.0);
    std::size_t n = 0;
    for (std::size_t i = 0; i < tokens.token_count(); ++i) {
        if (tokens.mask[i] == 0) continue;
        const auto row = tokens.matrix.row(i);
        for (std::size_t j = 0; j < dim; ++j) out[j] += row[j];
        ++n;
    }
    if (n == 0) {
        throw std::domain_error("mean_pool: no attended tokens");
    }
    for (auto& v : out) v /= static_cast<double>(n);
    return out;
}

ToyEncoder ToyEncoder::make(std::uint32_t vocab_size, std::uint32_t dim, std::uint64_t seed) {
    if (vocab_size == 0 || dim == 0) {
        throw std::invalid_argument("toy encoder: vocab_size and dim must be positive");
    }
    ToyEncoder enc;
    enc.vocab_size = vocab_size;
    enc.dim = dim;
    enc.seed = seed;
    enc.table = Matrix(vocab_size, dim);
    SplitMix64 rng(seed);
    for (auto& v : enc.table.data) {
        v = 0.02 * rng.next_normal();
    }
    return enc;
}

std::vector<std::string> toy_tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!current.empty()) {
                tokens.push_back(std::move(current));
                current.clear();
            }
        } else {
            current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

std::uint32_t toy_token_row(const ToyEncoder& encoder, std::string_view token) {
    return static_cast<std::uint32_t>(fnv1a64(token) % encoder.vocab_size);
}

TokenEmbeddings toy_encode(const ToyEncoder& encoder, std::string_view text) {
    const auto tokens = toy_tokenize(text);
    if (tokens.empty()) {
        throw std::domain_error("toy_encode: text has no tokens");
    }
    TokenEmbeddings out;
    out.matrix = Matrix(tokens.size(), encoder.dim);
    out.mask.assign(tokens.size(), 1);
    out.source_rows.reserve(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const std::uint32_t row = toy_token_row(encoder, tokens[i]);
        out.source_rows.push_back(row);
        const auto src = encoder.table.row(row);
        auto dst = out.matrix.row(i);
        std::copy(src.begin(), src.end(), dst.begin());
    }
    return out;
}

namespace {

constexpr char kEmbeddingsMagic[4] = {'A', 'E', 'N', 'E'};
constexpr std::uint16_t kEmbeddingsVersion = 1;

} // namespace

void write_embeddings_stream(std::ostream& out, const TokenEmbeddings& tokens) {
    tokens.validate();
    out.write(kEmbeddingsMagic, 4);
    io::write_u16(out, kEmbeddingsVersion);
    io::write_u32(out, static_cast<std::uint32_t>(tokens.dim()));
    io::write_u32(out, static_cast<std::uint32_t>(tokens.token_count()));
    for (double v : tokens.matrix.data) {
        io::write_f32(out, static_cast<float>(v));
    }
    for (auto m : tokens.mask) {
        io::write_u8(out, m != 0 ? 1 : 0);
    }
    if (!out) {
        throw format_error("embeddings write failed");
    }
}

TokenEmbeddings read_embeddings_stream(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kEmbeddingsMagic, 4) != 0) {
        throw format_error("embeddings file: bad magic");
    }
    const std::uint16_t version = io::read_u16(in);
    if (version != kEmbeddingsVersion) {
        throw format_error("embeddings file: unsupported version " + std::to_string(version));
    }
    const std::uint32_t dim = io::read_u32(in);
    const std::uint32_t count = io::read_u32(in);
    if (count == 0 || dim == 0) {
        throw format_error("embeddings file: empty payload");
    }
    TokenEmbeddings tokens;
    tokens.matrix = Matrix(count, dim);
    for (auto& v : tokens.matrix.data) {
        v = static_cast<double>(io::read_f32(in));
    }
    tokens.mask.resize(count);
    for (auto& m : tokens.mask) {
        m = io::read_u8(in);
    }
    tokens.validate();
    return tokens;
}

void write_embeddings(const std::filesystem::path& path, const TokenEmbeddings& tokens) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw format_error("cannot open for writing: " + path.string());
    }
    write_embeddings_stream(out, tokens);
}

TokenEmbeddings read_embeddings(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw format_error("cannot open for reading: " + path.string());
    }
    return read_embeddings_stream(in);
}

} // namespace aen
