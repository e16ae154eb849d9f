#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "gqst/dataset_io.hpp"

using namespace gqst;
namespace fs = std::filesystem;

namespace {

std::vector<LabeledState> make_states(std::uint64_t count, std::size_t points,
                                      std::uint64_t seed) {
    std::vector<LabeledState> states;
    generate_dataset(ParamRanges{}, count, points, seed,
                     [&](std::uint64_t, const LabeledState& s) {
                         states.push_back(s);
                     });
    return states;
}

struct TempFile {
    fs::path path;
    explicit TempFile(const char* name) {
        path = fs::temp_directory_path() / name;
    }
    ~TempFile() {
        std::error_code ec;
        fs::remove(path, ec);
    }
};

}  // namespace

TEST_CASE("binary dataset round trip is bit exact") {
    TempFile tmp("gqst_roundtrip.gqst");
    DatasetHeader header;
    header.count = 7;
    header.points_per_state = 32;
    header.base_seed = 31337;
    const auto states = make_states(7, 32, 31337);
    write_dataset(tmp.path.string(), header, states);

    CHECK(fs::file_size(tmp.path) == dataset_file_size(header));

    const auto [rh, rs] = read_dataset(tmp.path.string());
    CHECK(rh.count == 7);
    CHECK(rh.points_per_state == 32);
    CHECK(rh.base_seed == 31337);
    CHECK(rh.ranges.eps_max == header.ranges.eps_max);
    REQUIRE(rs.size() == states.size());
    for (std::size_t i = 0; i < rs.size(); ++i) {
        CHECK(rs[i].params.r == states[i].params.r);
        CHECK(rs[i].params.epsilon == states[i].params.epsilon);
        CHECK(rs[i].target.sxx == states[i].target.sxx);
        CHECK(rs[i].target.theta0 == states[i].target.theta0);
        REQUIRE(rs[i].sequence.size() == 32);
        for (std::size_t j = 0; j < 32; ++j) {
            CHECK(rs[i].sequence.points[j].x == states[i].sequence.points[j].x);
            CHECK(rs[i].sequence.points[j].theta ==
                  states[i].sequence.points[j].theta);
        }
    }

    // Random access matches bulk reads.
    DatasetReader reader(tmp.path.string());
    const LabeledState s3 = reader.read(3);
    CHECK(s3.params.phi == states[3].params.phi);
    CHECK_THROWS_AS(reader.read(7), format_error);
}

TEST_CASE("corrupted magic and truncation are rejected") {
    TempFile tmp("gqst_corrupt.gqst");
    DatasetHeader header;
    header.count = 2;
    header.points_per_state = 8;
    write_dataset(tmp.path.string(), header, make_states(2, 8, 1));

    {
        std::fstream f(tmp.path, std::ios::in | std::ios::out |
                                     std::ios::binary);
        f.write("BADMAGIC", 8);
    }
    CHECK_THROWS_AS(DatasetReader(tmp.path.string()), format_error);

    write_dataset(tmp.path.string(), header, make_states(2, 8, 1));
    fs::resize_file(tmp.path, fs::file_size(tmp.path) - 16);
    CHECK_THROWS_AS(DatasetReader(tmp.path.string()), format_error);

    CHECK_THROWS_AS(DatasetReader("/nonexistent/nowhere.gqst"), io_error);
}

TEST_CASE("writer enforces the declared record count") {
    TempFile tmp("gqst_short.gqst");
    DatasetHeader header;
    header.count = 3;
    header.points_per_state = 8;
    DatasetWriter writer(tmp.path.string(), header);
    writer.append(make_states(1, 8, 5)[0]);
    CHECK_THROWS(writer.close());
    CHECK_FALSE(fs::exists(tmp.path));  // temp file is not promoted
}

TEST_CASE("sequence CSV round trip") {
    TempFile tmp("gqst_seq.csv");
    const auto seq =
        generate_sequence({0.6, 0.1, 0.9, 0.01}, 50,
                          PhaseScheme::UniformRandom, 9);
    write_sequence_csv(tmp.path.string(), seq);
    const auto back = read_sequence_csv(tmp.path.string());
    REQUIRE(back.size() == 50);
    for (std::size_t i = 0; i < 50; ++i) {
        CHECK(back.points[i].x ==
              doctest::Approx(seq.points[i].x).epsilon(1e-12));
        CHECK(back.points[i].theta ==
              doctest::Approx(seq.points[i].theta).epsilon(1e-12));
    }
    CHECK_THROWS_AS(read_sequence_csv("/nonexistent/seq.csv"), io_error);
}
