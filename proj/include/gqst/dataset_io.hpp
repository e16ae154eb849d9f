#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gqst/errors.hpp"
#include "gqst/sequence.hpp"

namespace gqst {

/// Binary dataset layout (all multi-byte fields little-endian):
///   magic "GQST0001" (8 bytes)
///   version          u32 (= 1)
///   points_per_state u32
///   count            u64
///   base_seed        u64
///   ranges           8 x f64 (r_db, n, phi, epsilon as min/max pairs)
/// then per record:
///   labels           7 x f64 (r, n, phi, epsilon, sxx, spp, theta0)
///   points           points_per_state x 2 f64 (x, theta)
struct DatasetHeader {
    std::uint32_t version = 1;
    std::uint32_t points_per_state = 2048;
    std::uint64_t count = 0;
    std::uint64_t base_seed = 0;
    ParamRanges ranges;
};

inline constexpr char kDatasetMagic[9] = "GQST0001";
inline constexpr std::size_t kDatasetHeaderBytes = 8 + 4 + 4 + 8 + 8 + 8 * 8;

/// Expected file size in bytes for a given header.
std::uint64_t dataset_file_size(const DatasetHeader& header);

class DatasetWriter {
public:
    /// Writes to path + ".tmp" and renames on close().
    DatasetWriter(const std::string& path, const DatasetHeader& header);
    ~DatasetWriter();

    void append(const LabeledState& state);
    void close();

private:
    struct Impl;
    Impl* impl_;
};

void write_dataset(const std::string& path, const DatasetHeader& header,
                   const std::vector<LabeledState>& states);

class DatasetReader {
public:
    explicit DatasetReader(const std::string& path);
    ~DatasetReader();

    const DatasetHeader& header() const;
    /// Random access by record index; throws format_error past the end.
    LabeledState read(std::uint64_t index) const;

private:
    struct Impl;
    Impl* impl_;
};

std::pair<DatasetHeader, std::vector<LabeledState>> read_dataset(
    const std::string& path);

/// One row per point, header line "x,theta".
void write_sequence_csv(const std::string& path, const QuadratureSequence& seq);
QuadratureSequence read_sequence_csv(const std::string& path);

}  // namespace gqst
