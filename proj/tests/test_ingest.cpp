#include <fstream>

#include "deltamon/ingest.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace deltamon;
using testsupport::ScratchDir;
using testsupport::make_observation;
using testsupport::make_series;

namespace {

ObservationSeries random_series(Rng& rng) {
    const int rows = 4 + int(rng.uniform_int(0, 4));
    const int cols = 4 + int(rng.uniform_int(0, 4));
    ObservationSeries s = make_series(rows, cols);
    for (Mode m : kAllModes) {
        const int n = int(rng.uniform_int(0, 4));
        std::int64_t t = rng.uniform_int(0, 1000000);
        for (int i = 0; i < n; ++i) {
            Observation o = make_observation(m, t, rows, cols, 0.0f);
            for (auto& v : o.data.v) v = float(rng.uniform(-5.0, 5.0));
            if (o.mask)
                for (auto& v : o.mask->v) v = rng.uniform() < 0.3 ? 0 : 1;
            s.obs(m).push_back(std::move(o));
            t += rng.uniform_int(1, 100000);
        }
    }
    return s;
}

bool deep_equal(const ObservationSeries& a, const ObservationSeries& b) {
    if (a.scene.height != b.scene.height || a.scene.width != b.scene.width ||
        a.scene.crs != b.scene.crs || a.scene.bounds != b.scene.bounds)
        return false;
    for (Mode m : kAllModes) {
        const auto& la = a.obs(m);
        const auto& lb = b.obs(m);
        if (la.size() != lb.size()) return false;
        for (std::size_t i = 0; i < la.size(); ++i) {
            if (la[i].timestamp != lb[i].timestamp) return false;
            if (la[i].data.v != lb[i].data.v) return false;  // bit-exact float compare
            if (la[i].mask.has_value() != lb[i].mask.has_value()) return false;
            if (la[i].mask && la[i].mask->v != lb[i].mask->v) return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("bundle read sorts observations per mode") {
    ScratchDir dir("ingest_sort");
    ObservationSeries s = make_series(4, 4);
    // intentionally unsorted optical observations, 3 OPT + 2 SAR_ASC
    s.obs(Mode::Opt).push_back(make_observation(Mode::Opt, 3000, 4, 4, 3.0f));
    s.obs(Mode::Opt).push_back(make_observation(Mode::Opt, 1000, 4, 4, 1.0f));
    s.obs(Mode::Opt).push_back(make_observation(Mode::Opt, 2000, 4, 4, 2.0f));
    s.obs(Mode::SarAsc).push_back(make_observation(Mode::SarAsc, 500, 4, 4, 0.5f));
    s.obs(Mode::SarAsc).push_back(make_observation(Mode::SarAsc, 100, 4, 4, 0.1f));
    write_bundle(s, dir.path);

    const ObservationSeries r = read_bundle(dir.path);
    REQUIRE(r.obs(Mode::Opt).size() == 3);
    REQUIRE(r.obs(Mode::SarAsc).size() == 2);
    CHECK(r.obs(Mode::SarDsc).empty());
    CHECK(r.obs(Mode::Opt)[0].timestamp == 1000);
    CHECK(r.obs(Mode::Opt)[1].timestamp == 2000);
    CHECK(r.obs(Mode::Opt)[2].timestamp == 3000);
    CHECK(r.obs(Mode::Opt)[0].data.v[0] == 1.0f);
    CHECK(r.obs(Mode::SarAsc)[0].timestamp == 100);
}

TEST_CASE("raster byte-length mismatch is an error") {
    ScratchDir dir("ingest_shape");
    ObservationSeries s = make_series(4, 4);
    s.obs(Mode::SarAsc).push_back(make_observation(Mode::SarAsc, 100, 4, 4, 1.0f));
    write_bundle(s, dir.path);
    // truncate the raster file so bytes != bands*H*W*4
    std::ofstream trunc(dir.path / "SAR_ASC_00000.f32", std::ios::binary | std::ios::trunc);
    trunc << "xx";
    trunc.close();
    CHECK_THROWS_AS(read_bundle(dir.path), Error);
}

TEST_CASE("empty series writes an empty manifest and no rasters") {
    ScratchDir dir("ingest_empty");
    write_bundle(make_series(4, 4), dir.path);
    std::ifstream in(dir.path / "manifest.json");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(text.find("[]") != std::string::npos);
    int files = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir.path))
        if (e.path().extension() == ".f32") ++files;
    CHECK(files == 0);
    const ObservationSeries r = read_bundle(dir.path);
    CHECK(r.total_observations() == 0);
}

TEST_CASE("masked optical observation emits a mask file") {
    ScratchDir dir("ingest_mask");
    ObservationSeries s = make_series(4, 4);
    s.obs(Mode::Opt).push_back(make_observation(Mode::Opt, 100, 4, 4, 1.0f));
    write_bundle(s, dir.path);
    CHECK(std::filesystem::exists(dir.path / "OPT_00000.mask.u8"));
}

TEST_CASE("bundle round trip is deeply equal on randomized instances") {
    Rng rng(20240811);
    for (int i = 0; i < 100; ++i) {
        ScratchDir dir("ingest_roundtrip");
        const ObservationSeries s = random_series(rng);
        write_bundle(s, dir.path);
        const ObservationSeries r = read_bundle(dir.path);
        REQUIRE(deep_equal(s, r));
    }
}

TEST_CASE("non-finite raster values are rejected") {
    ScratchDir dir("ingest_nan");
    ObservationSeries s = make_series(4, 4);
    Observation o = make_observation(Mode::SarDsc, 100, 4, 4, 1.0f);
    o.data.v[3] = std::numeric_limits<float>::quiet_NaN();
    s.obs(Mode::SarDsc).push_back(std::move(o));
    write_bundle(s, dir.path);
    CHECK_THROWS_WITH_AS(read_bundle(dir.path), doctest::Contains("non-finite"), Error);
}

TEST_CASE("duplicate timestamps within a mode are rejected") {
    ScratchDir dir("ingest_dup");
    ObservationSeries s = make_series(4, 4);
    s.obs(Mode::SarAsc).push_back(make_observation(Mode::SarAsc, 100, 4, 4, 1.0f));
    s.obs(Mode::SarAsc).push_back(make_observation(Mode::SarAsc, 100, 4, 4, 2.0f));
    write_bundle(s, dir.path);
    CHECK_THROWS_WITH_AS(read_bundle(dir.path), doctest::Contains("duplicate"), Error);
}

TEST_CASE("validate_series findings") {
    SUBCASE("well-formed series has no findings") {
        ObservationSeries s = make_series(4, 4);
        s.obs(Mode::Opt).push_back(make_observation(Mode::Opt, 100, 4, 4, 1.0f));
        s.obs(Mode::SarAsc).push_back(make_observation(Mode::SarAsc, 100, 4, 4, 1.0f));
        CHECK(validate_series(s).empty());
    }
    SUBCASE("SAR observation with 13 bands is a band-count violation") {
        ObservationSeries s = make_series(4, 4);
        Observation o = make_observation(Mode::SarAsc, 100, 4, 4, 1.0f);
        o.data = BandCube(13, 4, 4, 1.0f);
        s.obs(Mode::SarAsc).push_back(std::move(o));
        const auto findings = validate_series(s);
        REQUIRE(findings.size() == 1);
        CHECK(findings[0].rule == "band-count violation");
        CHECK(findings[0].mode == Mode::SarAsc);
        CHECK(findings[0].index == 0);
    }
    SUBCASE("optical observation without mask is flagged") {
        ObservationSeries s = make_series(4, 4);
        Observation o = make_observation(Mode::Opt, 100, 4, 4, 1.0f);
        o.mask.reset();
        s.obs(Mode::Opt).push_back(std::move(o));
        const auto findings = validate_series(s);
        REQUIRE(findings.size() == 1);
        CHECK(findings[0].rule == "missing mask");
    }
    SUBCASE("non-increasing timestamps are flagged") {
        ObservationSeries s = make_series(4, 4);
        s.obs(Mode::SarDsc).push_back(make_observation(Mode::SarDsc, 200, 4, 4, 1.0f));
        s.obs(Mode::SarDsc).push_back(make_observation(Mode::SarDsc, 100, 4, 4, 1.0f));
        const auto findings = validate_series(s);
        REQUIRE(findings.size() == 1);
        CHECK(findings[0].rule == "non-increasing timestamp");
    }
}

TEST_CASE("iso-8601 timestamps round trip") {
    CHECK(format_utc(parse_utc("2017-03-01T00:00:00Z")) == "2017-03-01T00:00:00Z");
    CHECK(format_utc(parse_utc("2022-02-24T04:30:59Z")) == "2022-02-24T04:30:59Z");
    CHECK(parse_utc("1970-01-01T00:00:00Z") == 0);
    CHECK(parse_utc("1970-01-02T00:00:00Z") == kSecondsPerDay);
    CHECK_THROWS_AS(parse_utc("2017-03-01 00:00:00"), Error);
}
