#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "ipdma/dataset.hpp"
#include "ipdma/errors.hpp"
#include "ipdma/rng.hpp"
#include "test_util.hpp"

using namespace ipdma;

namespace {

const char* kSmallCsv =
    "study,arm,outcome,x\n"
    "s1,trt,1.5,0.1\n"
    "s1,ctl,0.5,0.2\n"
    "s1,trt,2.5,0.3\n"
    "s2,ctl,1.0,0.4\n"
    "s2,trt,2.0,0.5\n"
    "s2,ctl,0.0,0.6\n";

CovariateSchema one_x() { return CovariateSchema({{"x", CovariateKind::Continuous, {}}}); }

} // namespace

TEST_CASE("load_dataset round-trips a small file") {
    const auto dir = testutil::temp_dir("load_small");
    const auto path = testutil::write_text(dir / "small.csv", kSmallCsv);

    LoadReport report;
    const auto ds = load_dataset(path.string(), one_x(), {"trt", "ctl"}, &report);
    CHECK(ds.records().size() == 6);
    CHECK(report.rows_parsed == 6);
    CHECK(report.rows_dropped_missing == 0);
    CHECK(ds.studies() == std::vector<std::string>{"s1", "s2"});
    CHECK(ds.records()[0].outcome == 1.5);
    CHECK(ds.records()[5].covariates[0] == 0.6);
}

TEST_CASE("load_dataset drops rows with missing cells and reports per column") {
    const auto dir = testutil::temp_dir("load_missing");
    const auto path = testutil::write_text(dir / "missing.csv",
                                           "study,arm,outcome,x\n"
                                           "s1,trt,1.5,0.1\n"
                                           "s1,ctl,0.5,\n"
                                           "s1,trt,2.5,0.3\n"
                                           "s2,ctl,1.0,0.4\n"
                                           "s2,trt,2.0,0.5\n"
                                           "s2,ctl,0.0,0.6\n");

    LoadReport report;
    const auto ds = load_dataset(path.string(), one_x(), {"trt", "ctl"}, &report);
    CHECK(ds.records().size() == 5);
    CHECK(report.rows_dropped_missing == 1);
    bool found = false;
    for (const auto& [column, count] : report.missing_by_column)
        if (column == "x") {
            CHECK(count == 1);
            found = true;
        }
    CHECK(found);
}

TEST_CASE("load_dataset error paths") {
    const auto dir = testutil::temp_dir("load_errors");
    const auto pair = TreatmentPair{"trt", "ctl"};

    SUBCASE("missing required column") {
        const auto path =
            testutil::write_text(dir / "nocol.csv", "study,arm,x\ns1,trt,0.1\n");
        CHECK_THROWS_AS(load_dataset(path.string(), one_x(), pair), DataError);
    }
    SUBCASE("unparseable numeric cell") {
        const auto path = testutil::write_text(dir / "badnum.csv",
                                               "study,arm,outcome,x\ns1,trt,abc,0.1\n");
        CHECK_THROWS_WITH_AS(load_dataset(path.string(), one_x(), pair),
                             doctest::Contains("cannot parse"), DataError);
    }
    SUBCASE("categorical value outside declared levels") {
        CovariateSchema schema({{"loc", CovariateKind::Categorical, {"back", "neck"}}});
        const auto path = testutil::write_text(dir / "badlevel.csv",
                                               "study,arm,outcome,loc\ns1,trt,1.0,leg\n");
        CHECK_THROWS_WITH_AS(load_dataset(path.string(), schema, pair),
                             doctest::Contains("not a declared level"), DataError);
    }
    SUBCASE("empty dataset after filtering") {
        const auto path =
            testutil::write_text(dir / "empty.csv", "study,arm,outcome,x\ns1,trt,1.0,\n");
        CHECK_THROWS_WITH_AS(load_dataset(path.string(), one_x(), pair),
                             doctest::Contains("no usable rows"), DataError);
    }
}

TEST_CASE("save/load round-trip reproduces records bitwise") {
    const auto dir = testutil::temp_dir("roundtrip");
    std::vector<IndividualRecord> records;
    Rng rng(7, 0);
    CovariateSchema schema({{"x", CovariateKind::Continuous, {}},
                            {"loc", CovariateKind::Categorical, {"back", "neck", "leg"}}});
    for (int i = 0; i < 40; ++i) {
        IndividualRecord r;
        r.study = i % 2 ? "a" : "b";
        r.arm = i % 3 ? "trt" : "ctl";
        r.outcome = (rng.next_double() - 0.5) * std::pow(10.0, static_cast<double>(i % 13) - 6.0);
        r.covariates = {rng.next_double() / 3.0, static_cast<double>(rng.bounded(3))};
        records.push_back(std::move(r));
    }
    const MetaDataset ds(schema, records, {"trt", "ctl"});

    const auto path = dir / "roundtrip.csv";
    save_dataset(ds, path.string());
    const auto loaded = load_dataset(path.string(), schema, {"trt", "ctl"});

    REQUIRE(loaded.records().size() == ds.records().size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        CHECK(loaded.records()[i].study == ds.records()[i].study);
        CHECK(loaded.records()[i].arm == ds.records()[i].arm);
        CHECK(loaded.records()[i].outcome == ds.records()[i].outcome); // bitwise
        CHECK(loaded.records()[i].covariates == ds.records()[i].covariates);
    }
}

TEST_CASE("load_dataset handles a trial-corpus-shaped file") {
    // 984 rows over 6 studies (143..190 each), categorical pain location
    const auto dir = testutil::temp_dir("shaped");
    const std::size_t sizes[6] = {143, 190, 160, 170, 151, 170};
    std::string csv = "study,arm,outcome,pain0,location\n";
    Rng rng(11, 0);
    for (int s = 0; s < 6; ++s) {
        for (std::size_t i = 0; i < sizes[s]; ++i) {
            csv += "study" + std::to_string(s + 1) + ",";
            csv += (i % 2 ? "trt" : "ctl");
            csv += "," + std::to_string(2.0 + 6.0 * rng.next_double());
            csv += "," + std::to_string(3.0 + 4.0 * rng.next_double());
            csv += (s < 3 ? ",back\n" : ",neck\n");
        }
    }
    const auto path = testutil::write_text(dir / "shaped.csv", csv);
    CovariateSchema schema({{"pain0", CovariateKind::Continuous, {}},
                            {"location", CovariateKind::Categorical, {"back", "neck", "leg"}}});
    const auto ds = load_dataset(path.string(), schema, {"trt", "ctl"});

    CHECK(ds.records().size() == 984);
    CHECK(ds.studies().size() == 6);
    for (const auto& study : ds.studies()) {
        const auto n = ds.study_rows(study).size();
        CHECK(n >= 143);
        CHECK(n <= 190);
    }
}

TEST_CASE("MetaDataset construction validation") {
    CovariateSchema schema({{"x", CovariateKind::Continuous, {}}});
    std::vector<IndividualRecord> records = {{"s", "trt", 1.0, {0.1}}, {"s", "ctl", 2.0, {0.2}}};

    CHECK_THROWS_WITH_AS(MetaDataset(schema, records, {"trt", "trt"}),
                         doctest::Contains("distinct"), DataError);
    CHECK_THROWS_WITH_AS(MetaDataset(schema, records, {"trt", ""}),
                         doctest::Contains("non-empty"), DataError);
    CHECK_THROWS_WITH_AS(MetaDataset(schema, records, {"trt", "placebo"}),
                         doctest::Contains("comparator arm 'placebo'"), DataError);

    auto bad_width = records;
    bad_width[0].covariates = {0.1, 0.2};
    CHECK_THROWS_WITH_AS(MetaDataset(schema, bad_width, {"trt", "ctl"}),
                         doctest::Contains("schema declares"), DataError);

    auto bad_outcome = records;
    bad_outcome[1].outcome = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH_AS(MetaDataset(schema, bad_outcome, {"trt", "ctl"}),
                         doctest::Contains("non-finite outcome"), DataError);

    CovariateSchema cat({{"loc", CovariateKind::Categorical, {"a", "b"}}});
    std::vector<IndividualRecord> bad_level = {{"s", "trt", 1.0, {2.0}},
                                               {"s", "ctl", 2.0, {0.0}}};
    CHECK_THROWS_WITH_AS(MetaDataset(cat, bad_level, {"trt", "ctl"}),
                         doctest::Contains("declared levels"), DataError);
}

TEST_CASE("partition splits target vs contributing") {
    SUBCASE("two studies") {
        const auto ds = testutil::make_dataset({
            {"A", "trt", 1.0, 0.0},
            {"A", "ctl", 0.0, 0.0},
            {"B", "trt", 2.0, 1.0},
            {"B", "ctl", 1.0, 1.0},
        });
        const auto assign = partition(ds, "A");
        CHECK(assign.target_rows == std::vector<std::size_t>{0, 1});
        CHECK(assign.contributing_rows == std::vector<std::size_t>{2, 3});
        CHECK(assign.excluded_rows.empty());
        CHECK(assign.warnings.empty());
    }

    SUBCASE("unknown study id") {
        const auto ds = testutil::make_dataset({{"A", "trt", 1.0, 0.0}, {"A", "ctl", 0.0, 0.0}});
        CHECK_THROWS_AS(partition(ds, "missing"), DataError);
    }

    SUBCASE("single-arm contributing study is excluded with a warning") {
        const auto ds = testutil::make_dataset({
            {"A", "trt", 1.0, 0.0},
            {"A", "ctl", 0.0, 0.0},
            {"B", "trt", 2.0, 1.0},
            {"B", "ctl", 1.0, 1.0},
            {"C", "trt", 3.0, 2.0}, // arm 'ctl' missing
            {"C", "trt", 4.0, 2.0},
        });
        const auto assign = partition(ds, "A");
        CHECK(assign.contributing_rows == std::vector<std::size_t>{2, 3});
        CHECK(assign.excluded_rows == std::vector<std::size_t>{4, 5});
        REQUIRE(assign.warnings.size() == 1);
        CHECK(assign.warnings[0].find("'C'") != std::string::npos);
        CHECK(assign.warnings[0].find("'ctl'") != std::string::npos);
    }

    SUBCASE("target with no pair rows gets a warning") {
        const auto ds = testutil::make_dataset({
            {"A", "other", 1.0, 0.0},
            {"B", "trt", 2.0, 1.0},
            {"B", "ctl", 1.0, 1.0},
        });
        const auto assign = partition(ds, "A");
        CHECK(assign.target_rows.empty());
        REQUIRE(assign.warnings.size() == 1);
        CHECK(assign.warnings[0].find("no rows in the treatment pair") != std::string::npos);
    }

    SUBCASE("arms outside the pair are excluded everywhere") {
        const auto ds = testutil::make_dataset({
            {"A", "trt", 1.0, 0.0},
            {"A", "ctl", 0.0, 0.0},
            {"A", "other", 9.0, 0.0},
            {"B", "trt", 2.0, 1.0},
            {"B", "ctl", 1.0, 1.0},
            {"B", "other", 9.0, 1.0},
        });
        const auto assign = partition(ds, "A");
        CHECK(assign.target_rows == std::vector<std::size_t>{0, 1});
        CHECK(assign.contributing_rows == std::vector<std::size_t>{3, 4});
        CHECK(assign.excluded_rows == std::vector<std::size_t>{2, 5});
    }
}

TEST_CASE("partition is a true partition of the records") {
    Rng rng(3, 0);
    std::vector<std::tuple<std::string, std::string, double, double>> rows;
    const char* studies[4] = {"w", "x", "y", "z"};
    const char* arms[3] = {"trt", "ctl", "stray"};
    for (int i = 0; i < 120; ++i)
        rows.push_back({studies[rng.bounded(4)], arms[rng.bounded(3)],
                        rng.next_double(), rng.next_double()});
    const auto ds = testutil::make_dataset(rows);

    for (const auto& target : ds.studies()) {
        const auto assign = partition(ds, target);
        CHECK(assign.target_rows.size() + assign.contributing_rows.size() +
                  assign.excluded_rows.size() ==
              ds.records().size());
        std::vector<std::size_t> all = assign.target_rows;
        all.insert(all.end(), assign.contributing_rows.begin(), assign.contributing_rows.end());
        all.insert(all.end(), assign.excluded_rows.begin(), assign.excluded_rows.end());
        std::sort(all.begin(), all.end());
        for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);
    }
}

TEST_CASE("study_summaries hand example") {
    const auto ds = testutil::make_dataset({
        {"s", "trt", 1.0, 0.0},
        {"s", "trt", 3.0, 0.0},
        {"s", "ctl", 0.0, 0.0},
        {"s", "ctl", 2.0, 0.0},
        {"t", "trt", 1.0, 0.0},
        {"t", "trt", 1.0, 0.0},
        {"t", "ctl", 1.0, 0.0},
        {"t", "ctl", 1.0, 0.0},
    });
    const auto set = study_summaries(ds);
    REQUIRE(set.summaries.size() == 2);

    const auto& s = set.summaries[0];
    CHECK(s.study == "s");
    CHECK(s.te == doctest::Approx(1.0).epsilon(1e-15));
    // var{1,3} = 2, var{0,2} = 2 -> se = sqrt(2/2 + 2/2) = sqrt(2)
    CHECK(s.se_te == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
    CHECK(s.se_te * s.se_te ==
          doctest::Approx(s.sd_treatment * s.sd_treatment / 2.0 +
                          s.sd_comparator * s.sd_comparator / 2.0)
              .epsilon(1e-12));
    CHECK_FALSE(s.degenerate);

    // identical arms -> te 0; constant outcomes -> degenerate
    const auto& t = set.summaries[1];
    CHECK(t.te == 0.0);
    CHECK(t.degenerate);
    REQUIRE(set.flagged.size() == 1);
    CHECK(set.flagged[0].find("'t'") != std::string::npos);
}

TEST_CASE("study_summaries flags arms with n < 2") {
    const auto ds = testutil::make_dataset({
        {"s", "trt", 1.0, 0.0},
        {"s", "ctl", 0.0, 0.0},
        {"s", "ctl", 2.0, 0.0},
        {"ok", "trt", 1.0, 0.0},
        {"ok", "trt", 2.0, 0.0},
        {"ok", "ctl", 0.0, 0.0},
        {"ok", "ctl", 1.0, 0.0},
    });
    const auto set = study_summaries(ds);
    REQUIRE(set.summaries.size() == 1);
    CHECK(set.summaries[0].study == "ok");
    REQUIRE(set.flagged.size() == 1);
    CHECK(set.flagged[0].find("'s'") != std::string::npos);
    CHECK(set.flagged[0].find("n = 1") != std::string::npos);
}

TEST_CASE("study_summaries te matches an independent single-pass oracle and is permutation invariant") {
    Rng rng(17, 0);
    std::vector<std::tuple<std::string, std::string, double, double>> rows;
    for (int i = 0; i < 60; ++i)
        rows.push_back({i % 2 ? "a" : "b", rng.bounded(2) ? "trt" : "ctl",
                        rng.next_double() * 10.0 - 5.0, rng.next_double()});
    // guarantee both arms twice per study
    for (const char* study : {"a", "b"})
        for (const char* arm : {"trt", "ctl"}) {
            rows.push_back({study, arm, 0.25, 0.0});
            rows.push_back({study, arm, 0.75, 0.0});
        }
    const auto ds = testutil::make_dataset(rows);
    const auto set = study_summaries(ds);

    for (const auto& summary : set.summaries) {
        // independent oracle: single pass over the raw tuples
        double sum_t = 0.0, sum_c = 0.0;
        std::size_t n_t = 0, n_c = 0;
        for (const auto& [study, arm, outcome, x] : rows) {
            if (study != summary.study) continue;
            if (arm == "trt") {
                sum_t += outcome;
                ++n_t;
            } else {
                sum_c += outcome;
                ++n_c;
            }
        }
        const double oracle_te = sum_t / static_cast<double>(n_t) - sum_c / static_cast<double>(n_c);
        CHECK(std::abs(summary.te - oracle_te) <= 1e-12);
    }

    // permutation invariance (match by study id; listing order follows first appearance)
    auto shuffled = rows;
    std::mt19937_64 mt(5);
    std::shuffle(shuffled.begin(), shuffled.end(), mt);
    const auto set2 = study_summaries(testutil::make_dataset(shuffled));
    REQUIRE(set2.summaries.size() == set.summaries.size());
    for (const auto& original : set.summaries) {
        bool matched = false;
        for (const auto& permuted : set2.summaries) {
            if (permuted.study != original.study) continue;
            CHECK(permuted.te == doctest::Approx(original.te).epsilon(1e-15));
            matched = true;
        }
        CHECK(matched);
    }
}

TEST_CASE("covariate aggregates: means and level proportions") {
    CovariateSchema schema({{"x", CovariateKind::Continuous, {}},
                            {"loc", CovariateKind::Categorical, {"back", "neck"}}});
    std::vector<IndividualRecord> records = {
        {"s", "trt", 1.0, {1.0, 0.0}},
        {"s", "trt", 2.0, {2.0, 1.0}},
        {"s", "ctl", 3.0, {3.0, 1.0}},
        {"s", "ctl", 4.0, {6.0, 1.0}},
    };
    const MetaDataset ds(schema, records, {"trt", "ctl"});
    const auto set = study_summaries(ds);
    REQUIRE(set.summaries.size() == 1);
    const auto& agg = set.summaries[0].covariate_aggregates;
    REQUIRE(agg.size() == 2);
    CHECK(agg[0].values[0] == doctest::Approx(3.0));
    REQUIRE(agg[1].values.size() == 2);
    CHECK(agg[1].values[0] == doctest::Approx(0.25));
    CHECK(agg[1].values[1] == doctest::Approx(0.75));
    CHECK(agg[1].values[0] + agg[1].values[1] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("restrict_covariates projects records") {
    CovariateSchema schema({{"x", CovariateKind::Continuous, {}},
                            {"y", CovariateKind::Continuous, {}}});
    std::vector<IndividualRecord> records = {
        {"s", "trt", 1.0, {1.0, 10.0}},
        {"s", "ctl", 2.0, {2.0, 20.0}},
    };
    const MetaDataset ds(schema, records, {"trt", "ctl"});
    const auto sub = restrict_covariates(ds, {"y"});
    CHECK(sub.schema().size() == 1);
    CHECK(sub.schema().at(0).name == "y");
    CHECK(sub.records()[1].covariates == std::vector<double>{20.0});
    CHECK_THROWS_AS(restrict_covariates(ds, {"nope"}), DataError);

    const auto none = restrict_covariates(ds, {});
    CHECK(none.schema().empty());
    CHECK(none.records().size() == 2);
}

TEST_CASE("transform_covariate log and standardize") {
    const auto ds = testutil::make_dataset({
        {"s", "trt", 1.0, 1.0},
        {"s", "ctl", 2.0, std::exp(1.0)},
        {"t", "trt", 1.0, std::exp(2.0)},
        {"t", "ctl", 2.0, std::exp(3.0)},
    });
    const auto logged = transform_covariate(ds, "x", TransformKind::Log);
    CHECK(logged.records()[0].covariates[0] == doctest::Approx(0.0));
    CHECK(logged.records()[3].covariates[0] == doctest::Approx(3.0));

    const auto standardized = transform_covariate(logged, "x", TransformKind::Standardize);
    double mean = 0.0;
    for (const auto& r : standardized.records()) mean += r.covariates[0];
    CHECK(mean / 4.0 == doctest::Approx(0.0).epsilon(1e-12));

    const auto with_zero = testutil::make_dataset({{"s", "trt", 1.0, 0.0}, {"s", "ctl", 1.0, 1.0}});
    CHECK_THROWS_AS(transform_covariate(with_zero, "x", TransformKind::Log), DataError);
}
