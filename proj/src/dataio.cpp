#include "protalign/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <unordered_set>

namespace protalign::dataio {

namespace {

constexpr char kMagic[4] = {'P', 'A', 'E', '1'};

// Explicit little-endian scalar I/O so files are bit-identical everywhere.
template <typename T>
void put_le(std::string& out, T v) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
    }
}

void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_le(out, bits);
}

struct Reader {
    std::ifstream in;
    std::string path;

    explicit Reader(const std::string& p) : in(p, std::ios::binary), path(p) {
        if (!in) throw IoError("cannot open " + p);
    }

    void bytes(void* dst, std::size_t n) {
        in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (in.gcount() != static_cast<std::streamsize>(n)) {
            throw CorruptionError("truncated file: " + path);
        }
    }

    template <typename T>
    T get_le() {
        unsigned char buf[sizeof(T)];
        bytes(buf, sizeof(T));
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
        }
        return static_cast<T>(v);
    }

    float get_f32() {
        const std::uint32_t bits = get_le<std::uint32_t>();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    bool at_eof() {
        return in.peek() == std::char_traits<char>::eof();
    }
};

void append_matrix_f32(std::string& out, const Matrix& m) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows));
    for (double v : m.data) {
        put_f32(out, static_cast<float>(v));
    }
}

Matrix read_matrix_f32(Reader& r, std::size_t cols) {
    const auto rows = r.get_le<std::uint32_t>();
    if (rows == 0) {
        throw CorruptionError("record with zero tokens in " + r.path);
    }
    Matrix m(rows, cols);
    for (double& v : m.data) {
        v = static_cast<double>(r.get_f32());
    }
    return m;
}

}  // namespace

void write_dataset(const std::string& path, const std::vector<PairedRecord>& records) {
    std::uint32_t d_p = 0, d_s = 0;
    std::unordered_set<std::string> seen;
    for (const auto& rec : records) {
        if (rec.seq_tokens.rows < 1 || rec.struct_tokens.rows < 1) {
            throw ValidationError("record " + rec.id + " has an empty token matrix");
        }
        if (d_p == 0) {
            d_p = static_cast<std::uint32_t>(rec.seq_tokens.cols);
            d_s = static_cast<std::uint32_t>(rec.struct_tokens.cols);
        } else if (rec.seq_tokens.cols != d_p || rec.struct_tokens.cols != d_s) {
            throw ValidationError("record " + rec.id + " has inconsistent widths");
        }
        if (!seen.insert(rec.id).second) {
            throw ValidationError("duplicate record id: " + rec.id);
        }
    }

    std::string buf;
    buf.append(kMagic, 4);
    put_le<std::uint32_t>(buf, kDatasetVersion);
    put_le<std::uint32_t>(buf, d_p);
    put_le<std::uint32_t>(buf, d_s);
    put_le<std::uint64_t>(buf, records.size());
    for (const auto& rec : records) {
        put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(rec.id.size()));
        buf.append(rec.id);
        append_matrix_f32(buf, rec.seq_tokens);
        append_matrix_f32(buf, rec.struct_tokens);
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed: " + path);
}

std::vector<PairedRecord> read_dataset(const std::string& path, DatasetHeader* header) {
    Reader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError("bad magic in " + path + " (expected PAE1)");
    }
    const auto version = r.get_le<std::uint32_t>();
    if (version != kDatasetVersion) {
        throw FormatError("unsupported PAE1 version " + std::to_string(version));
    }
    DatasetHeader hdr;
    hdr.d_p = r.get_le<std::uint32_t>();
    hdr.d_s = r.get_le<std::uint32_t>();
    hdr.count = r.get_le<std::uint64_t>();

    std::vector<PairedRecord> records;
    records.reserve(hdr.count);
    std::unordered_set<std::string> seen;
    for (std::uint64_t i = 0; i < hdr.count; ++i) {
        PairedRecord rec;
        const auto id_len = r.get_le<std::uint32_t>();
        rec.id.resize(id_len);
        if (id_len > 0) r.bytes(rec.id.data(), id_len);
        if (!seen.insert(rec.id).second) {
            throw ValidationError("duplicate record id in " + path + ": " + rec.id);
        }
        rec.seq_tokens = read_matrix_f32(r, hdr.d_p);
        rec.struct_tokens = read_matrix_f32(r, hdr.d_s);
        records.push_back(std::move(rec));
    }
    if (!r.at_eof()) {
        throw CorruptionError("trailing bytes after " + std::to_string(hdr.count) +
                              " records in " + path);
    }
    if (header) *header = hdr;
    return records;
}

std::vector<PairedRecord> generate_synthetic(const SynthSpec& spec) {
    if (spec.n_pairs < 1 || spec.latent_dim < 1 || spec.d_p < 1 || spec.d_s < 1) {
        throw ConfigError("generate_synthetic: counts and widths must be positive");
    }
    if (spec.latent_dim > std::min(spec.d_p, spec.d_s)) {
        throw ConfigError("generate_synthetic: latent_dim exceeds a modality width");
    }
    if (spec.t_min < 1 || spec.t_min > spec.t_max) {
        throw ConfigError("generate_synthetic: invalid token count range");
    }
    if (spec.noise_sigma < 0.0) {
        throw ConfigError("generate_synthetic: noise_sigma must be non-negative");
    }

    Rng rng(spec.seed);
    const double map_sigma = 1.0 / std::sqrt(static_cast<double>(spec.latent_dim));
    Matrix a_p(spec.d_p, spec.latent_dim), a_s(spec.d_s, spec.latent_dim);
    for (double& v : a_p.data) v = rng.normal(0.0, map_sigma);
    for (double& v : a_s.data) v = rng.normal(0.0, map_sigma);

    const auto make_tokens = [&](const Matrix& map, const std::vector<double>& u,
                                 std::size_t t) {
        Matrix tokens(t, map.rows);
        for (std::size_t i = 0; i < t; ++i) {
            for (std::size_t r = 0; r < map.rows; ++r) {
                double v = 0.0;
                for (std::size_t c = 0; c < map.cols; ++c) v += map(r, c) * u[c];
                if (spec.noise_sigma > 0.0) v += rng.normal(0.0, spec.noise_sigma);
                tokens(i, r) = v;
            }
        }
        return tokens;
    };

    std::vector<PairedRecord> records;
    records.reserve(spec.n_pairs);
    for (std::size_t i = 0; i < spec.n_pairs; ++i) {
        std::vector<double> u(spec.latent_dim);
        for (double& v : u) v = rng.normal();
        const std::size_t t_p = spec.t_min + rng.index(spec.t_max - spec.t_min + 1);
        const std::size_t t_s = spec.t_min + rng.index(spec.t_max - spec.t_min + 1);

        PairedRecord rec;
        char id[16];
        std::snprintf(id, sizeof(id), "synth%06zu", i);
        rec.id = id;
        rec.seq_tokens = make_tokens(a_p, u, t_p);
        rec.struct_tokens = make_tokens(a_s, u, t_s);
        records.push_back(std::move(rec));
    }
    return records;
}

Splits split(const std::vector<PairedRecord>& records, double f_train, double f_val,
             double f_test, std::uint64_t seed) {
    if (records.empty()) {
        throw ValidationError("split: empty input");
    }
    if (f_train < 0 || f_val < 0 || f_test < 0 || f_train + f_val + f_test > 1.0 + 1e-12) {
        throw ConfigError("split: fractions must be non-negative and sum to at most 1");
    }
    std::vector<std::size_t> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    const auto n = static_cast<double>(records.size());
    const std::size_t n_val = static_cast<std::size_t>(std::floor(f_val * n + 1e-9));
    const std::size_t n_test = static_cast<std::size_t>(std::floor(f_test * n + 1e-9));
    std::size_t n_train = static_cast<std::size_t>(std::floor(f_train * n + 1e-9));
    // Floor each fraction; rounding remainders go to train. Records beyond
    // the fraction sum (when it is < 1) stay unassigned.
    const std::size_t allocated =
        static_cast<std::size_t>(std::floor((f_train + f_val + f_test) * n + 1e-9));
    n_train += allocated - std::min(allocated, n_train + n_val + n_test);

    Splits out;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n_train; ++i) out.train.push_back(records[order[pos++]]);
    for (std::size_t i = 0; i < n_val; ++i) out.val.push_back(records[order[pos++]]);
    for (std::size_t i = 0; i < n_test; ++i) out.test.push_back(records[order[pos++]]);
    return out;
}

std::vector<Batch> make_batches(const std::vector<PairedRecord>& records, std::size_t n,
                                Rng& rng) {
    if (n < 1) {
        throw ConfigError("make_batches: batch size must be positive");
    }
    std::vector<std::size_t> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    const auto pad_modality = [](PaddedModality& mod,
                                 const std::vector<const PairedRecord*>& recs, bool seq_side) {
        mod.t_max = 0;
        for (const auto* r : recs) {
            const Matrix& m = seq_side ? r->seq_tokens : r->struct_tokens;
            mod.t_max = std::max(mod.t_max, m.rows);
        }
        for (const auto* r : recs) {
            const Matrix& m = seq_side ? r->seq_tokens : r->struct_tokens;
            Matrix padded(mod.t_max, m.cols);
            std::vector<bool> mask(mod.t_max, false);
            for (std::size_t i = 0; i < m.rows; ++i) {
                std::copy(m.row(i).begin(), m.row(i).end(), padded.row(i).begin());
                mask[i] = true;
            }
            mod.tokens.push_back(std::move(padded));
            mod.mask.push_back(std::move(mask));
        }
    };

    std::vector<Batch> batches;
    for (std::size_t start = 0; start < order.size(); start += n) {
        Batch b;
        const std::size_t end = std::min(start + n, order.size());
        for (std::size_t i = start; i < end; ++i) {
            b.records.push_back(&records[order[i]]);
        }
        pad_modality(b.seq, b.records, true);
        pad_modality(b.strct, b.records, false);
        batches.push_back(std::move(b));
    }
    return batches;
}

}  // namespace protalign::dataio
