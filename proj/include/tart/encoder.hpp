#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "tart/autodiff.hpp"
#include "tart/matrix.hpp"

namespace tart {

struct Vocab {
    std::unordered_map<std::string, std::size_t> index;
    std::vector<std::string> tokens;
    std::size_t unk;  // index of the unknown-token row

    std::size_t lookup(const std::string& token) const {
        auto it = index.find(token);
        return it == index.end() ? unk : it->second;
    }
};

struct EmbeddingTable {
    Matrix vectors;  // V x D, last row is the unknown token (zero vector)
    bool trainable = false;

    std::size_t dim() const { return vectors.cols(); }
};

/// Mean-pooled word embeddings followed by a trainable affine projection.
/// Output dimension E matches the reference layer.
struct MeanAffineEncoder {
    EmbeddingTable table;
    Matrix projection;  // D x E
    Matrix bias;        // 1 x E

    std::size_t out_dim() const { return projection.cols(); }
};

/// Per-tape leaf nodes for the encoder parameters. `embeddings` is null
/// when the table is frozen.
struct EncoderGraph {
    const MeanAffineEncoder* encoder;
    Node* projection;
    Node* bias;
    Node* embeddings;

    static EncoderGraph bind(Tape& tape, const MeanAffineEncoder& enc);
};

/// Loads whitespace-delimited word vectors (`word v1 ... vD` per line).
/// An optional `V D` header line is detected and skipped. A zero row for
/// the unknown token is appended after the last kept word.
std::pair<Vocab, EmbeddingTable> load_embeddings(const std::string& path,
                                                 std::size_t vocab_limit = 0);

/// Lowercases, splits on whitespace and strips leading/trailing punctuation
/// from each token.
std::vector<std::string> tokenize(const std::string& text);

/// Mean of token embedding rows, affinely projected to E dims. 1xE output.
Node* encode(Tape& tape, const EncoderGraph& graph, const Vocab& vocab,
             const std::vector<std::string>& tokens);

/// Pre-embedded input path: affine projection of a raw feature vector.
Node* encode_vector(Tape& tape, const EncoderGraph& graph, const std::vector<double>& features);

}  // namespace tart
