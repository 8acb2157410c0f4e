#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dgtl/errors.hpp"
#include "dgtl/rng.hpp"
#include "dgtl/types.hpp"

namespace dgtl {

struct IndexEntry {
    std::int64_t sample_id = 0;
    int identity = 0;
    Modality modality = Modality::Visible;
    friend bool operator==(const IndexEntry&, const IndexEntry&) = default;
};

/// Catalogue of the samples a sampler may draw from.
class DatasetIndex {
public:
    DatasetIndex() = default;
    explicit DatasetIndex(std::vector<IndexEntry> entries) : entries_(std::move(entries)) {}

    const std::vector<IndexEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    /// Distinct identities in ascending order.
    std::vector<int> identities() const {
        std::set<int> ids;
        for (const auto& e : entries_) ids.insert(e.identity);
        return {ids.begin(), ids.end()};
    }

    /// Throws DataError on duplicate sample ids, negative identities, or an
    /// identity that lacks one modality.
    void validate() const {
        std::set<std::int64_t> seen;
        std::map<int, int> mask;
        for (const auto& e : entries_) {
            if (e.identity < 0)
                throw DataError("negative identity " + std::to_string(e.identity));
            if (!seen.insert(e.sample_id).second)
                throw DataError("duplicate sample_id " + std::to_string(e.sample_id));
            mask[e.identity] |= 1 << static_cast<int>(e.modality);
        }
        for (const auto& [id, bits] : mask)
            if (bits != 3)
                throw DataError("identity " + std::to_string(id) + " lacks " +
                                (bits & 1 ? "thermal" : "visible") + " samples");
    }

    /// Keep only entries accepted by `pred`.
    template <typename Pred>
    DatasetIndex filter(Pred pred) const {
        std::vector<IndexEntry> kept;
        std::copy_if(entries_.begin(), entries_.end(), std::back_inserter(kept), pred);
        return DatasetIndex(std::move(kept));
    }

    /// Reads `sample_id,identity,modality` CSV with modality in {V,T}.
    static DatasetIndex read_csv(std::istream& in) {
        std::string line;
        if (!std::getline(in, line)) throw ParseError("empty index file", 1);
        if (trim(line) != "sample_id,identity,modality")
            throw ParseError("expected header 'sample_id,identity,modality'", 1);
        std::vector<IndexEntry> entries;
        long row = 1;
        while (std::getline(in, line)) {
            ++row;
            if (trim(line).empty()) continue;
            std::stringstream ss(trim(line));
            std::string cell[3];
            for (int c = 0; c < 3; ++c)
                if (!std::getline(ss, cell[c], ','))
                    throw ParseError("expected 3 fields", row, c + 1);
            std::string extra;
            if (std::getline(ss, extra)) throw ParseError("unexpected extra field", row, 4);
            IndexEntry e;
            try {
                std::size_t used = 0;
                e.sample_id = std::stoll(cell[0], &used);
                if (used != cell[0].size()) throw std::invalid_argument("");
            } catch (const std::exception&) {
                throw ParseError("bad sample_id '" + cell[0] + "'", row, 1);
            }
            try {
                std::size_t used = 0;
                e.identity = std::stoi(cell[1], &used);
                if (used != cell[1].size()) throw std::invalid_argument("");
            } catch (const std::exception&) {
                throw ParseError("bad identity '" + cell[1] + "'", row, 2);
            }
            if (cell[2] == "V") e.modality = Modality::Visible;
            else if (cell[2] == "T") e.modality = Modality::Thermal;
            else throw ParseError("modality must be V or T, got '" + cell[2] + "'", row, 3);
            entries.push_back(e);
        }
        return DatasetIndex(std::move(entries));
    }

    static DatasetIndex read_csv(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IOError("cannot open index file " + path);
        return read_csv(in);
    }

    void write_csv(std::ostream& out) const {
        out << "sample_id,identity,modality\n";
        for (const auto& e : entries_)
            out << e.sample_id << ',' << e.identity << ',' << modality_code(e.modality) << '\n';
    }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return {};
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    std::vector<IndexEntry> entries_;
};

struct SamplerConfig {
    int P = 8;  // identities per batch
    int K = 4;  // samples per identity per modality
    std::uint64_t seed = 0;
};

/// 2*P*K slots, grouped by identity: K visible then K thermal per identity.
struct MiniBatchSpec {
    std::vector<std::int64_t> slots;
    std::vector<int> identities;
    std::vector<Modality> modalities;

    std::size_t size() const { return slots.size(); }
    friend bool operator==(const MiniBatchSpec&, const MiniBatchSpec&) = default;
};

/// Returns an empty string when `batch` has exactly P identities with K
/// slots per modality each, otherwise a description of the first violation.
inline std::string check_minibatch(const MiniBatchSpec& batch, int P, int K) {
    if (batch.identities.size() != batch.slots.size() ||
        batch.modalities.size() != batch.slots.size())
        return "parallel lists differ in length";
    if (batch.slots.size() != static_cast<std::size_t>(2 * P * K))
        return "expected " + std::to_string(2 * P * K) + " slots, got " +
               std::to_string(batch.slots.size());
    std::map<int, std::array<int, 2>> counts;
    for (std::size_t i = 0; i < batch.slots.size(); ++i)
        ++counts[batch.identities[i]][static_cast<int>(batch.modalities[i])];
    if (counts.size() != static_cast<std::size_t>(P))
        return "expected " + std::to_string(P) + " identities, got " +
               std::to_string(counts.size());
    for (const auto& [id, c] : counts)
        if (c[0] != K || c[1] != K)
            return "identity " + std::to_string(id) + " has " + std::to_string(c[0]) +
                   " visible and " + std::to_string(c[1]) + " thermal slots";
    return {};
}

/// One epoch of identity-balanced PK batches.
///
/// Identities are shuffled and consumed round-robin, giving ceil(N / P)
/// batches; a short final group is topped up with identities drawn from
/// those not already in it. Within an (identity, modality) group the K draws
/// are without replacement when the group holds at least K entries, with
/// replacement otherwise. Each epoch uses its own stream split from the seed,
/// so the result is a pure function of (index, cfg, epoch).
inline std::vector<MiniBatchSpec> build_epoch(const DatasetIndex& index, const SamplerConfig& cfg,
                                              std::uint64_t epoch = 0) {
    if (cfg.P < 2) throw ConfigError("P must be at least 2");
    if (cfg.K < 1) throw ConfigError("K must be at least 1");
    index.validate();

    // Group sample ids by (identity, modality), keeping index order.
    std::map<int, std::array<std::vector<std::int64_t>, 2>> groups;
    for (const auto& e : index.entries())
        groups[e.identity][static_cast<int>(e.modality)].push_back(e.sample_id);
    std::vector<int> ids;
    for (const auto& kv : groups) ids.push_back(kv.first);
    const std::size_t n = ids.size();
    if (static_cast<std::size_t>(cfg.P) > n)
        throw ConfigError("P = " + std::to_string(cfg.P) + " exceeds the " + std::to_string(n) +
                          " identities in the index");

    SplitMix64 rng = SplitMix64(cfg.seed).split(epoch);
    rng.shuffle(ids);

    const std::size_t P = static_cast<std::size_t>(cfg.P);
    const std::size_t num_batches = (n + P - 1) / P;
    std::vector<MiniBatchSpec> batches;
    batches.reserve(num_batches);
    for (std::size_t b = 0; b < num_batches; ++b) {
        std::vector<int> chosen(ids.begin() + b * P, ids.begin() + std::min(n, (b + 1) * P));
        if (chosen.size() < P) {
            std::vector<int> pool(ids.begin(), ids.begin() + b * P);
            for (std::size_t i = 0; chosen.size() < P; ++i) {
                const std::size_t j = i + rng.below(pool.size() - i);
                std::swap(pool[i], pool[j]);
                chosen.push_back(pool[i]);
            }
        }
        MiniBatchSpec batch;
        batch.slots.reserve(2 * P * cfg.K);
        for (int id : chosen) {
            for (int m = 0; m < 2; ++m) {
                std::vector<std::int64_t> group = groups.at(id)[m];
                const std::size_t k = static_cast<std::size_t>(cfg.K);
                if (group.size() >= k) {
                    for (std::size_t i = 0; i < k; ++i) {
                        const std::size_t j = i + rng.below(group.size() - i);
                        std::swap(group[i], group[j]);
                        batch.slots.push_back(group[i]);
                    }
                } else {
                    for (std::size_t i = 0; i < k; ++i)
                        batch.slots.push_back(group[rng.below(group.size())]);
                }
                batch.identities.insert(batch.identities.end(), k, id);
                batch.modalities.insert(batch.modalities.end(), k, static_cast<Modality>(m));
            }
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

}  // namespace dgtl
