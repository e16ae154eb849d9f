#include "gqst/dataset_io.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

namespace gqst {

namespace {

constexpr std::size_t kLabelDoubles = 7;

void put_bytes(std::FILE* f, const void* data, std::size_t bytes,
               const std::string& path) {
    if (std::fwrite(data, 1, bytes, f) != bytes)
        throw io_error("write failed: " + path);
}

void get_bytes(std::FILE* f, void* data, std::size_t bytes,
               const std::string& path) {
    if (std::fread(data, 1, bytes, f) != bytes)
        throw format_error("truncated file: " + path);
}

void serialize_header(std::FILE* f, const DatasetHeader& h,
                      const std::string& path) {
    put_bytes(f, kDatasetMagic, 8, path);
    put_bytes(f, &h.version, 4, path);
    put_bytes(f, &h.points_per_state, 4, path);
    put_bytes(f, &h.count, 8, path);
    put_bytes(f, &h.base_seed, 8, path);
    const double r[8] = {h.ranges.r_db_min, h.ranges.r_db_max, h.ranges.n_min,
                         h.ranges.n_max,    h.ranges.phi_min,  h.ranges.phi_max,
                         h.ranges.eps_min,  h.ranges.eps_max};
    put_bytes(f, r, sizeof(r), path);
}

DatasetHeader parse_header(std::FILE* f, const std::string& path) {
    char magic[8];
    get_bytes(f, magic, 8, path);
    if (std::memcmp(magic, kDatasetMagic, 8) != 0)
        throw format_error("bad dataset magic: " + path);
    DatasetHeader h;
    get_bytes(f, &h.version, 4, path);
    if (h.version != 1)
        throw format_error("unsupported dataset version: " + path);
    get_bytes(f, &h.points_per_state, 4, path);
    get_bytes(f, &h.count, 8, path);
    get_bytes(f, &h.base_seed, 8, path);
    double r[8];
    get_bytes(f, r, sizeof(r), path);
    h.ranges = {r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7]};
    if (h.count == 0) throw format_error("empty dataset: " + path);
    return h;
}

}  // namespace

std::uint64_t dataset_file_size(const DatasetHeader& h) {
    return kDatasetHeaderBytes +
           h.count * (kLabelDoubles + 2ULL * h.points_per_state) * 8ULL;
}

struct DatasetWriter::Impl {
    std::string path;
    std::string tmp_path;
    std::FILE* file = nullptr;
    DatasetHeader header;
    std::uint64_t written = 0;

    ~Impl() {
        if (file) {
            std::fclose(file);
            std::remove(tmp_path.c_str());
        }
    }
};

DatasetWriter::DatasetWriter(const std::string& path,
                             const DatasetHeader& header)
    : impl_(new Impl) {
    impl_->path = path;
    impl_->tmp_path = path + ".tmp";
    impl_->header = header;
    impl_->file = std::fopen(impl_->tmp_path.c_str(), "wb");
    if (!impl_->file) {
        delete impl_;
        throw io_error("cannot open for writing: " + path);
    }
    serialize_header(impl_->file, header, impl_->tmp_path);
}

DatasetWriter::~DatasetWriter() { delete impl_; }

void DatasetWriter::append(const LabeledState& state) {
    if (!impl_->file) throw io_error("writer already closed");
    if (state.sequence.size() != impl_->header.points_per_state)
        throw format_error("sequence length does not match header");
    const auto& p = state.params;
    const auto& t = state.target;
    const double labels[kLabelDoubles] = {p.r,   p.n,   p.phi,    p.epsilon,
                                          t.sxx, t.spp, t.theta0};
    put_bytes(impl_->file, labels, sizeof(labels), impl_->tmp_path);
    put_bytes(impl_->file, state.sequence.points.data(),
              state.sequence.size() * sizeof(QuadPoint), impl_->tmp_path);
    ++impl_->written;
}

void DatasetWriter::close() {
    if (!impl_->file) return;
    if (impl_->written != impl_->header.count)
        throw format_error("record count does not match header");
    const bool ok = std::fclose(impl_->file) == 0;
    impl_->file = nullptr;
    if (!ok) throw io_error("close failed: " + impl_->path);
    std::error_code ec;
    std::filesystem::rename(impl_->tmp_path, impl_->path, ec);
    if (ec) throw io_error("rename failed: " + impl_->path);
}

void write_dataset(const std::string& path, const DatasetHeader& header,
                   const std::vector<LabeledState>& states) {
    DatasetHeader h = header;
    h.count = states.size();
    DatasetWriter writer(path, h);
    for (const auto& s : states) writer.append(s);
    writer.close();
}

struct DatasetReader::Impl {
    std::string path;
    std::FILE* file = nullptr;
    DatasetHeader header;
    std::uint64_t record_bytes = 0;

    ~Impl() {
        if (file) std::fclose(file);
    }
};

DatasetReader::DatasetReader(const std::string& path) : impl_(new Impl) {
    impl_->path = path;
    impl_->file = std::fopen(path.c_str(), "rb");
    if (!impl_->file) {
        delete impl_;
        throw io_error("cannot open for reading: " + path);
    }
    try {
        impl_->header = parse_header(impl_->file, path);
        impl_->record_bytes =
            (kLabelDoubles + 2ULL * impl_->header.points_per_state) * 8ULL;
        std::error_code ec;
        const auto size = std::filesystem::file_size(path, ec);
        if (ec || size != dataset_file_size(impl_->header))
            throw format_error("file size does not match header: " + path);
    } catch (...) {
        delete impl_;
        throw;
    }
}

DatasetReader::~DatasetReader() { delete impl_; }

const DatasetHeader& DatasetReader::header() const { return impl_->header; }

LabeledState DatasetReader::read(std::uint64_t index) const {
    if (index >= impl_->header.count)
        throw format_error("record index out of range: " + impl_->path);
    const auto offset =
        kDatasetHeaderBytes + index * impl_->record_bytes;
    if (std::fseek(impl_->file, static_cast<long>(offset), SEEK_SET) != 0)
        throw io_error("seek failed: " + impl_->path);
    double labels[kLabelDoubles];
    get_bytes(impl_->file, labels, sizeof(labels), impl_->path);
    LabeledState state;
    state.params = {labels[0], labels[1], labels[2], labels[3]};
    state.target = {labels[4], labels[5], labels[6]};
    state.sequence.points.resize(impl_->header.points_per_state);
    get_bytes(impl_->file, state.sequence.points.data(),
              impl_->header.points_per_state * sizeof(QuadPoint), impl_->path);
    return state;
}

std::pair<DatasetHeader, std::vector<LabeledState>> read_dataset(
    const std::string& path) {
    DatasetReader reader(path);
    std::vector<LabeledState> states;
    states.reserve(reader.header().count);
    for (std::uint64_t i = 0; i < reader.header().count; ++i)
        states.push_back(reader.read(i));
    return {reader.header(), std::move(states)};
}

void write_sequence_csv(const std::string& path,
                        const QuadratureSequence& seq) {
    const std::string tmp = path + ".tmp";
    std::FILE* f = std::fopen(tmp.c_str(), "w");
    if (!f) throw io_error("cannot open for writing: " + path);
    std::fputs("x,theta\n", f);
    for (const auto& pt : seq.points)
        std::fprintf(f, "%.17g,%.17g\n", pt.x, pt.theta);
    if (std::fclose(f) != 0) throw io_error("close failed: " + path);
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw io_error("rename failed: " + path);
}

QuadratureSequence read_sequence_csv(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "r");
    if (!f) throw io_error("cannot open for reading: " + path);
    std::unique_ptr<std::FILE, int (*)(std::FILE*)> guard(f, std::fclose);
    char line[256];
    if (!std::fgets(line, sizeof(line), f))
        throw format_error("empty sequence file: " + path);
    QuadratureSequence seq;
    double x, theta;
    while (std::fgets(line, sizeof(line), f)) {
        if (line[0] == '\n' || line[0] == '\0') continue;
        if (std::sscanf(line, "%lf,%lf", &x, &theta) != 2)
            throw format_error("malformed sequence row: " + path);
        seq.points.push_back({x, theta});
    }
    if (seq.size() < 2) throw format_error("sequence too short: " + path);
    std::sort(seq.points.begin(), seq.points.end(),
              [](const QuadPoint& a, const QuadPoint& b) {
                  return a.theta < b.theta;
              });
    return seq;
}

}  // namespace gqst
