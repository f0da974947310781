#include "protalign/retrieval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <unordered_map>

namespace protalign::retrieval {

namespace {

void check_widths(const EmbeddingBank& queries, const EmbeddingBank& corpus) {
    if (queries.vectors.cols != corpus.vectors.cols) {
        throw ShapeError("retrieval: query and corpus widths disagree");
    }
}

// Corpus indices ordered by score descending, ties by ascending index.
std::vector<std::size_t> ranking(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

std::vector<double> score_row(std::span<const double> query, const EmbeddingBank& corpus) {
    std::vector<double> scores(corpus.size());
    for (std::size_t j = 0; j < corpus.size(); ++j) {
        scores[j] = numkit::dot(query, corpus.vectors.row(j));
    }
    return scores;
}

}  // namespace

EmbeddingBank embed_bank(const projector::ProjectionHead& head,
                         const std::vector<PairedRecord>& records, Side side) {
    EmbeddingBank bank;
    bank.modality = side == Side::Sequence ? "sequence" : "structure";
    bank.vectors = Matrix(records.size(), head.dim);
    bank.ids.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        const Matrix& tokens =
            side == Side::Sequence ? records[i].seq_tokens : records[i].struct_tokens;
        const auto pooled = projector::forward(head, tokens);
        std::copy(pooled.vector.begin(), pooled.vector.end(), bank.vectors.row(i).begin());
        bank.ids.push_back(records[i].id);
    }
    return bank;
}

RecallReport recall_at_k(const EmbeddingBank& queries, const EmbeddingBank& corpus,
                         const std::vector<std::size_t>& k_values) {
    check_widths(queries, corpus);
    std::unordered_map<std::string, std::size_t> corpus_index;
    for (std::size_t j = 0; j < corpus.size(); ++j) {
        corpus_index.emplace(corpus.ids[j], j);
    }

    RecallReport report;
    report.k_values = k_values;
    report.recall_at_k.assign(k_values.size(), 0.0);
    report.n_queries = queries.size();

    for (std::size_t i = 0; i < queries.size(); ++i) {
        const auto it = corpus_index.find(queries.ids[i]);
        if (it == corpus_index.end()) {
            throw ValidationError("recall_at_k: query id has no corpus pair: " +
                                  queries.ids[i]);
        }
        const auto scores = score_row(queries.vectors.row(i), corpus);
        const auto order = ranking(scores);
        std::size_t rank = corpus.size();
        for (std::size_t pos = 0; pos < order.size(); ++pos) {
            if (order[pos] == it->second) {
                rank = pos;
                break;
            }
        }
        for (std::size_t ki = 0; ki < k_values.size(); ++ki) {
            if (rank < k_values[ki]) {
                report.recall_at_k[ki] += 1.0;
            }
        }
    }
    if (report.n_queries > 0) {
        for (double& r : report.recall_at_k) r /= static_cast<double>(report.n_queries);
    }
    return report;
}

std::vector<ScoredId> top_k(std::span<const double> query, const EmbeddingBank& corpus,
                            std::size_t k) {
    if (k < 1) {
        throw ConfigError("top_k: k must be positive");
    }
    if (query.size() != corpus.vectors.cols) {
        throw ShapeError("top_k: query width does not match corpus");
    }
    k = std::min(k, corpus.size());
    const auto scores = score_row(query, corpus);
    const auto order = ranking(scores);
    std::vector<ScoredId> out;
    out.reserve(k);
    for (std::size_t pos = 0; pos < k; ++pos) {
        out.push_back({corpus.ids[order[pos]], scores[order[pos]]});
    }
    return out;
}

SimilaritySummary export_similarity(const EmbeddingBank& queries, const EmbeddingBank& corpus,
                                    const std::string& path) {
    check_widths(queries, corpus);
    if (queries.size() == 0 || corpus.size() == 0) {
        throw ValidationError("export_similarity: empty bank");
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");

    out << "id";
    for (const auto& id : corpus.ids) out << ',' << id;
    out << '\n';

    SimilaritySummary summary;
    std::size_t n_diag = 0, n_off = 0;
    char buf[32];
    for (std::size_t i = 0; i < queries.size(); ++i) {
        out << queries.ids[i];
        const auto scores = score_row(queries.vectors.row(i), corpus);
        for (std::size_t j = 0; j < corpus.size(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.6f", scores[j]);
            out << ',' << buf;
            if (queries.ids[i] == corpus.ids[j]) {
                summary.mean_diagonal += scores[j];
                ++n_diag;
            } else {
                summary.mean_off_diagonal += scores[j];
                ++n_off;
            }
        }
        out << '\n';
    }
    if (n_diag > 0) summary.mean_diagonal /= static_cast<double>(n_diag);
    if (n_off > 0) summary.mean_off_diagonal /= static_cast<double>(n_off);
    summary.margin = summary.mean_diagonal - summary.mean_off_diagonal;

    std::snprintf(buf, sizeof(buf), "%.6f", summary.mean_diagonal);
    out << "# mean_diagonal=" << buf;
    std::snprintf(buf, sizeof(buf), "%.6f", summary.mean_off_diagonal);
    out << ",mean_off_diagonal=" << buf;
    std::snprintf(buf, sizeof(buf), "%.6f", summary.margin);
    out << ",margin=" << buf << '\n';
    if (!out) throw IoError("write failed: " + path);
    return summary;
}

void export_embeddings(const std::vector<const EmbeddingBank*>& banks,
                       const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    std::size_t dim = 0;
    for (const auto* b : banks) dim = std::max(dim, b->vectors.cols);
    out << "id,modality";
    for (std::size_t c = 0; c < dim; ++c) out << ",e" << c;
    out << '\n';
    char buf[40];
    for (const auto* bank : banks) {
        for (std::size_t i = 0; i < bank->size(); ++i) {
            out << bank->ids[i] << ',' << bank->modality;
            for (double v : bank->vectors.row(i)) {
                std::snprintf(buf, sizeof(buf), "%.17g", v);
                out << ',' << buf;
            }
            out << '\n';
        }
    }
    if (!out) throw IoError("write failed: " + path);
}

void write_recall_csv(const RecallReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "k,recall,n_queries\n";
    char buf[32];
    for (std::size_t i = 0; i < report.k_values.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.6f", report.recall_at_k[i]);
        out << report.k_values[i] << ',' << buf << ',' << report.n_queries << '\n';
    }
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace protalign::retrieval
