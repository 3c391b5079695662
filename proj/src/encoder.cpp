#include "tart/encoder.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace tart {

EncoderGraph EncoderGraph::bind(Tape& tape, const MeanAffineEncoder& enc) {
    EncoderGraph g;
    g.encoder = &enc;
    g.projection = tape.leaf(enc.projection);
    g.bias = tape.leaf(enc.bias);
    g.embeddings = enc.table.trainable ? tape.leaf(enc.table.vectors) : nullptr;
    return g;
}

std::pair<Vocab, EmbeddingTable> load_embeddings(const std::string& path,
                                                 std::size_t vocab_limit) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open embedding file: " + path);

    Vocab vocab;
    std::vector<double> data;
    std::size_t dim = 0;
    std::string line;
    std::size_t line_no = 0;
    bool first_content_line = true;

    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);

        if (first_content_line) {
            // A `V D` header is two integer fields and nothing else.
            std::size_t v, d;
            char extra;
            std::istringstream probe(line);
            if ((probe >> v >> d) && !(probe >> extra)) {
                first_content_line = false;
                continue;
            }
            first_content_line = false;
        }

        std::string word;
        ss >> word;
        std::vector<double> row;
        double x;
        while (ss >> x) row.push_back(x);
        if (row.empty())
            throw FormatError("embedding file line " + std::to_string(line_no) +
                              ": no vector components");
        if (dim == 0) {
            dim = row.size();
        } else if (row.size() != dim) {
            throw FormatError("embedding file line " + std::to_string(line_no) +
                              ": expected " + std::to_string(dim) + " components, got " +
                              std::to_string(row.size()));
        }
        if (vocab.index.count(word)) continue;
        vocab.index[word] = vocab.tokens.size();
        vocab.tokens.push_back(word);
        data.insert(data.end(), row.begin(), row.end());
        if (vocab_limit > 0 && vocab.tokens.size() >= vocab_limit) break;
    }
    if (vocab.tokens.empty()) throw FormatError("embedding file is empty: " + path);

    // Unknown-token row: zero vector at the end.
    vocab.unk = vocab.tokens.size();
    vocab.tokens.push_back("<unk>");
    data.insert(data.end(), dim, 0.0);

    EmbeddingTable table;
    table.vectors = Matrix::from_external(vocab.tokens.size(), dim, std::move(data));
    return {std::move(vocab), std::move(table)};
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream ss(text);
    std::string raw;
    while (ss >> raw) {
        std::size_t begin = 0, end = raw.size();
        while (begin < end && std::ispunct(static_cast<unsigned char>(raw[begin]))) ++begin;
        while (end > begin && std::ispunct(static_cast<unsigned char>(raw[end - 1]))) --end;
        if (begin == end) continue;
        std::string tok = raw.substr(begin, end - begin);
        for (char& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        out.push_back(std::move(tok));
    }
    return out;
}

Node* encode(Tape& tape, const EncoderGraph& graph, const Vocab& vocab,
             const std::vector<std::string>& tokens) {
    if (tokens.empty()) throw EmptyInputError("encode: empty token list");
    const MeanAffineEncoder& enc = *graph.encoder;

    Node* pooled;
    if (graph.embeddings) {
        std::vector<Node*> rows;
        rows.reserve(tokens.size());
        for (const auto& t : tokens) rows.push_back(tape.row(graph.embeddings, vocab.lookup(t)));
        pooled = tape.mean_rows(tape.stack_rows(rows));
    } else {
        // Frozen table: the pooled mean is a constant, so no per-token nodes.
        Matrix mean(1, enc.table.dim());
        for (const auto& t : tokens) {
            std::size_t r = vocab.lookup(t);
            for (std::size_t c = 0; c < mean.cols(); ++c)
                mean.at(0, c) += enc.table.vectors.at(r, c);
        }
        for (std::size_t c = 0; c < mean.cols(); ++c)
            mean.at(0, c) /= static_cast<double>(tokens.size());
        pooled = tape.constant(std::move(mean));
    }
    return tape.add(tape.matmul(pooled, graph.projection), graph.bias);
}

Node* encode_vector(Tape& tape, const EncoderGraph& graph, const std::vector<double>& features) {
    if (features.empty()) throw EmptyInputError("encode_vector: empty feature vector");
    Node* x = tape.constant(Matrix::row_vector(features));
    return tape.add(tape.matmul(x, graph.projection), graph.bias);
}

}  // namespace tart
