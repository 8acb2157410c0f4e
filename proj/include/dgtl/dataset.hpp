#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dgtl/errors.hpp"
#include "dgtl/rng.hpp"
#include "dgtl/sampler.hpp"
#include "dgtl/types.hpp"

namespace dgtl {

/// Samples plus the index describing them; lookups are by sample_id.
class Dataset {
public:
    Dataset() = default;
    Dataset(Shape3 shape, std::vector<LabeledSample> samples) : shape_(shape), samples_(std::move(samples)) {
        std::vector<IndexEntry> entries;
        entries.reserve(samples_.size());
        for (std::size_t i = 0; i < samples_.size(); ++i) {
            const auto& s = samples_[i];
            if (s.data.size() != static_cast<std::size_t>(shape_.size()))
                throw ShapeError("sample " + std::to_string(s.sample_id) + " does not match the input shape");
            if (!by_id_.emplace(s.sample_id, i).second)
                throw DataError("duplicate sample_id " + std::to_string(s.sample_id));
            entries.push_back({s.sample_id, s.identity, s.modality});
        }
        index_ = DatasetIndex(std::move(entries));
    }

    const Shape3& shape() const { return shape_; }
    const DatasetIndex& index() const { return index_; }
    const std::vector<LabeledSample>& samples() const { return samples_; }

    const LabeledSample& at(std::int64_t sample_id) const {
        auto it = by_id_.find(sample_id);
        if (it == by_id_.end()) throw DataError("unknown sample_id " + std::to_string(sample_id));
        return samples_[it->second];
    }

    std::vector<const LabeledSample*> lookup(const std::vector<std::int64_t>& ids) const {
        std::vector<const LabeledSample*> out;
        out.reserve(ids.size());
        for (auto id : ids) out.push_back(&at(id));
        return out;
    }

    std::vector<const LabeledSample*> lookup(const DatasetIndex& index) const {
        std::vector<const LabeledSample*> out;
        out.reserve(index.size());
        for (const auto& e : index.entries()) out.push_back(&at(e.sample_id));
        return out;
    }

    /// Writes `index.csv` and `samples.csv` into `dir`.
    void save(const std::filesystem::path& dir) const {
        std::filesystem::create_directories(dir);
        std::ofstream idx(dir / "index.csv");
        if (!idx) throw IOError("cannot write " + (dir / "index.csv").string());
        index_.write_csv(idx);
        std::ofstream out(dir / "samples.csv");
        if (!out) throw IOError("cannot write " + (dir / "samples.csv").string());
        out << "sample_id," << shape_.height << 'x' << shape_.width << 'x' << shape_.channels << '\n';
        char buf[40];
        for (const auto& s : samples_) {
            out << s.sample_id;
            for (double v : s.data) {
                std::snprintf(buf, sizeof buf, "%.17g", v);
                out << ',' << buf;
            }
            out << '\n';
        }
        if (!out) throw IOError("write failed for " + (dir / "samples.csv").string());
    }

    static Dataset load(const std::filesystem::path& dir) {
        const DatasetIndex index = DatasetIndex::read_csv((dir / "index.csv").string());
        std::ifstream in(dir / "samples.csv");
        if (!in) throw IOError("cannot open " + (dir / "samples.csv").string());
        std::string line;
        if (!std::getline(in, line)) throw ParseError("empty samples file", 1);
        Shape3 shape;
        if (std::sscanf(line.c_str(), "sample_id,%dx%dx%d", &shape.height, &shape.width, &shape.channels) != 3 ||
            shape.height < 1 || shape.width < 1 || shape.channels < 1)
            throw ParseError("expected header 'sample_id,HxWxC'", 1);
        std::unordered_map<std::int64_t, std::vector<double>> values;
        long row = 1;
        while (std::getline(in, line)) {
            ++row;
            if (line.empty() || line == "\r") continue;
            std::stringstream ss(line);
            std::string cell;
            std::getline(ss, cell, ',');
            char* end = nullptr;
            const long long id = std::strtoll(cell.c_str(), &end, 10);
            if (cell.empty() || *end != '\0') throw ParseError("bad sample_id '" + cell + "'", row, 1);
            std::vector<double> data;
            data.reserve(shape.size());
            long col = 1;
            while (std::getline(ss, cell, ',')) {
                ++col;
                const double v = std::strtod(cell.c_str(), &end);
                if (cell.empty() || (*end != '\0' && *end != '\r') || !std::isfinite(v))
                    throw ParseError("bad value '" + cell + "'", row, col);
                data.push_back(v);
            }
            if (data.size() != static_cast<std::size_t>(shape.size()))
                throw ParseError("expected " + std::to_string(shape.size()) + " values", row);
            values.emplace(id, std::move(data));
        }
        std::vector<LabeledSample> samples;
        samples.reserve(index.size());
        for (const auto& e : index.entries()) {
            auto it = values.find(e.sample_id);
            if (it == values.end())
                throw DataError("sample " + std::to_string(e.sample_id) + " listed in index.csv has no data");
            samples.push_back({e.sample_id, e.identity, e.modality, std::move(it->second)});
        }
        return Dataset(shape, std::move(samples));
    }

private:
    Shape3 shape_;
    std::vector<LabeledSample> samples_;
    std::unordered_map<std::int64_t, std::size_t> by_id_;
    DatasetIndex index_;
};

/// Parameters of the synthetic two-modality benchmark. Each sample is an
/// identity prototype plus a modality-wide offset plus per-sample noise, all
/// Gaussian with the given scales. identity_scale > noise_scale keeps the
/// identities separable.
struct SyntheticSpec {
    int num_identities = 32;
    int samples_per_identity = 8;  // per modality
    Shape3 input_shape{6, 6, 4};
    double identity_scale = 3.0;
    double modality_offset_scale = 1.0;
    double noise_scale = 0.5;
    std::uint64_t seed = 7;

    void validate() const {
        if (num_identities < 2) throw ConfigError("synthetic data needs at least 2 identities");
        if (samples_per_identity < 1) throw ConfigError("samples_per_identity must be >= 1");
        if (input_shape.height < 1 || input_shape.width < 1 || input_shape.channels < 1)
            throw ConfigError("input shape must be positive");
        if (!(identity_scale > noise_scale)) throw ConfigError("identity_scale must exceed noise_scale");
        if (!(modality_offset_scale >= 0) || !(noise_scale >= 0))
            throw ConfigError("scales must be non-negative");
    }
};

/// Sample ids run consecutively over (identity, modality V then T, draw).
inline Dataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    SplitMix64 rng(spec.seed);
    const int size = spec.input_shape.size();
    auto gaussian = [&](double scale) {
        std::vector<double> v(size);
        for (auto& x : v) x = scale * rng.normal();
        return v;
    };
    std::vector<std::vector<double>> offsets;
    for (int m = 0; m < 2; ++m) offsets.push_back(gaussian(spec.modality_offset_scale));
    std::vector<LabeledSample> samples;
    std::int64_t next_id = 0;
    for (int id = 0; id < spec.num_identities; ++id) {
        const auto proto = gaussian(spec.identity_scale);
        for (int m = 0; m < 2; ++m) {
            for (int j = 0; j < spec.samples_per_identity; ++j) {
                LabeledSample s{next_id++, id, static_cast<Modality>(m), gaussian(spec.noise_scale)};
                for (int k = 0; k < size; ++k) s.data[k] += proto[k] + offsets[m][k];
                samples.push_back(std::move(s));
            }
        }
    }
    return Dataset(spec.input_shape, std::move(samples));
}

/// Holds out the last `per_group` entries (in index order) of every
/// (identity, modality) group; returns (train, test).
inline std::pair<DatasetIndex, DatasetIndex> split_holdout(const DatasetIndex& index, int per_group) {
    if (per_group < 1) throw ConfigError("holdout must keep at least one sample per group");
    std::map<std::pair<int, int>, int> remaining;
    for (const auto& e : index.entries()) ++remaining[{e.identity, static_cast<int>(e.modality)}];
    for (const auto& [key, count] : remaining)
        if (count <= per_group)
            throw ConfigError("identity " + std::to_string(key.first) + " has only " + std::to_string(count) +
                              " samples in one modality; cannot hold out " + std::to_string(per_group));
    std::vector<IndexEntry> train, test;
    for (const auto& e : index.entries()) {
        int& left = remaining[{e.identity, static_cast<int>(e.modality)}];
        (left-- > per_group ? train : test).push_back(e);
    }
    return {DatasetIndex(std::move(train)), DatasetIndex(std::move(test))};
}

}  // namespace dgtl
