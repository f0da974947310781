#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "protalign/numkit.hpp"

namespace protalign::dataio {

using numkit::Matrix;
using numkit::Rng;

struct PairedRecord {
    std::string id;
    Matrix seq_tokens;     // t_P x d_p
    Matrix struct_tokens;  // t_S x d_s
};

// PAE1 on-disk layout (all integers and floats little-endian):
//   magic "PAE1" | version u32 = 1 | d_p u32 | d_s u32 | count u64
//   per record: id_len u32 | id bytes | t_P u32 | t_P*d_p f32 | t_S u32 | t_S*d_s f32
// Floats are stored as f32; compute widens to f64 on load.
struct DatasetHeader {
    std::uint32_t d_p = 0;
    std::uint32_t d_s = 0;
    std::uint64_t count = 0;
};

constexpr std::uint32_t kDatasetVersion = 1;

void write_dataset(const std::string& path, const std::vector<PairedRecord>& records);
std::vector<PairedRecord> read_dataset(const std::string& path, DatasetHeader* header = nullptr);

// Synthetic paired-embedding generator. A shared latent u_i ~ N(0, I) is
// mapped into each modality by a fixed seeded linear map, so perfect
// cross-modal alignment is achievable by construction.
struct SynthSpec {
    std::size_t n_pairs = 512;
    std::size_t latent_dim = 16;
    std::size_t d_p = 64;
    std::size_t d_s = 32;
    std::size_t t_min = 3;
    std::size_t t_max = 12;
    double noise_sigma = 0.1;
    std::uint64_t seed = 7;
};

std::vector<PairedRecord> generate_synthetic(const SynthSpec& spec);

struct Splits {
    std::vector<PairedRecord> train, val, test;
};

// Seeded shuffle, then floor(fraction * n) records per split with every
// remainder record going to train.
Splits split(const std::vector<PairedRecord>& records, double f_train, double f_val,
             double f_test, std::uint64_t seed);

// One modality of a batch, padded to the longest token count in the batch.
// mask[r][i] is true exactly at real-token positions.
struct PaddedModality {
    std::size_t t_max = 0;
    std::vector<Matrix> tokens;             // each t_max x width
    std::vector<std::vector<bool>> mask;    // each length t_max
};

struct Batch {
    std::vector<const PairedRecord*> records;  // pairing is index i <-> i
    PaddedModality seq;
    PaddedModality strct;
};

// Epoch-shuffled batches of size n; the final partial batch is kept.
std::vector<Batch> make_batches(const std::vector<PairedRecord>& records, std::size_t n,
                                Rng& rng);

}  // namespace protalign::dataio
