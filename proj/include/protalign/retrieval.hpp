#pragma once

#include <string>
#include <vector>

#include "protalign/dataio.hpp"
#include "protalign/projector.hpp"

namespace protalign::retrieval {

using dataio::PairedRecord;
using numkit::Matrix;

enum class Side { Sequence, Structure };

// Immutable collection of unit-norm pooled embeddings with identifiers.
struct EmbeddingBank {
    std::vector<std::string> ids;
    Matrix vectors;  // M x D, rows unit norm
    std::string modality;

    std::size_t size() const { return ids.size(); }
};

struct RecallReport {
    std::vector<std::size_t> k_values;
    std::vector<double> recall_at_k;
    std::size_t n_queries = 0;
};

struct ScoredId {
    std::string id;
    double score;
};

struct SimilaritySummary {
    double mean_diagonal = 0.0;
    double mean_off_diagonal = 0.0;
    double margin = 0.0;  // mean_diagonal - mean_off_diagonal
};

// Runs the head over every record's chosen side, preserving order.
EmbeddingBank embed_bank(const projector::ProjectionHead& head,
                         const std::vector<PairedRecord>& records, Side side);

// For each query, corpus rows are ranked by dot product descending with ties
// broken by ascending corpus index; a query scores a hit at k if the corpus
// entry with the same id ranks within the top k. Throws ValidationError if a
// query id has no corpus counterpart.
RecallReport recall_at_k(const EmbeddingBank& queries, const EmbeddingBank& corpus,
                         const std::vector<std::size_t>& k_values);

// k highest-scoring corpus entries, descending, stable ties; k larger than
// the corpus is clamped.
std::vector<ScoredId> top_k(std::span<const double> query, const EmbeddingBank& corpus,
                            std::size_t k);

// All-pairs cosine similarity CSV: header row of corpus ids, one row per
// query, entries to 6 decimals, trailing "# summary" comment line. Diagonal
// means are taken over id-matched pairs.
SimilaritySummary export_similarity(const EmbeddingBank& queries, const EmbeddingBank& corpus,
                                    const std::string& path);

// id,modality,e0..e{D-1} CSV at 17 significant digits; multiple banks can
// share one file for joint projection.
void export_embeddings(const std::vector<const EmbeddingBank*>& banks,
                       const std::string& path);

void write_recall_csv(const RecallReport& report, const std::string& path);

}  // namespace protalign::retrieval
