#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "noqs/report.hpp"
#include "noqs/svgplot.hpp"

using namespace noqs;

namespace {

Model tiny_model(std::uint64_t seed) {
    auto lat = build_lattice(2, 2);
    TransformerConfig wf;
    wf.n_sites = lat.n;
    wf.d_e = 8;
    wf.n_h = 2;
    wf.d_f = 16;
    wf.l_t = 2;
    FNOConfig op;
    op.n_t = 20;
    op.t_max = 1.0;
    op.l_f = 2;
    op.d_v = 8;
    op.k_max = 10;
    op.n_c = 2;
    op.d_e = 8;
    return Model::create(lat, wf, op, seed);
}

} // namespace

TEST_CASE("report files round-trip to identical values") {
    TrajectoryReport r;
    r.meta["protocol"] = "p1";
    r.meta["n_samples"] = "4096";
    r.rows.push_back({0.3, 0.123456789012345678, 1e-3, -0.5, 2e-3, 0.25, 1.5e-3, -3.75, 4e-3});
    r.rows.push_back({0.1, 1.0 / 3.0, 1e-4, 0.9999999999999, 1e-4, 0, 0, 1e-17, 0});
    std::stringstream ss;
    write_report(ss, r);
    TrajectoryReport back = read_report(ss);
    REQUIRE(back.meta.at("protocol") == "p1");
    // rows come back sorted by t
    REQUIRE(back.rows.size() == 2);
    REQUIRE(back.rows[0].t == 0.1);
    REQUIRE(back.rows[1].t == 0.3);
    REQUIRE(back.rows[0].x == 1.0 / 3.0);
    REQUIRE(back.rows[0].zz == 0.9999999999999);
    REQUIRE(back.rows[0].e == 1e-17);
    REQUIRE(back.rows[1].x == 0.123456789012345678);
    REQUIRE(back.rows[1].e == -3.75);

    std::stringstream bad("0.1 0.2 nonsense\n");
    REQUIRE_THROWS_AS(read_report(bad), io_error);
}

TEST_CASE("a report compared with itself gives zero metrics") {
    TrajectoryReport r;
    for (int i = 0; i < 5; ++i)
        r.rows.push_back({0.2 * i, 0.1 * i, 0, -0.1 * i, 0, 0.05 * i, 0, -1.0 * i, 0});
    auto m = compare_reports(r, r);
    REQUIRE(m.n_shared == 5);
    REQUIRE(m.x.mae == 0);
    REQUIRE(m.zz.max_abs == 0);
    REQUIRE(m.e.mae == 0);
    REQUIRE(m.worst_mae() == 0);
}

TEST_CASE("compare aligns on shared times and rejects disjoint grids") {
    TrajectoryReport a, b;
    a.rows.push_back({0.0, 1.0, 0, 0, 0, 0, 0, 0, 0});
    a.rows.push_back({0.5, 0.8, 0, 0, 0, 0, 0, 0, 0});
    a.rows.push_back({1.0, 0.6, 0, 0, 0, 0, 0, 0, 0});
    b.rows.push_back({0.5, 0.7, 0, 0.2, 0, 0, 0, 0, 0});
    b.rows.push_back({0.25, 123.0, 0, 0, 0, 0, 0, 0, 0});
    auto m = compare_reports(a, b);
    REQUIRE(m.n_shared == 1);
    REQUIRE_THAT(m.x.mae, Catch::Matchers::WithinAbs(0.1, 1e-12));
    REQUIRE_THAT(m.zz.max_abs, Catch::Matchers::WithinAbs(0.2, 1e-12));

    TrajectoryReport c;
    c.rows.push_back({0.33, 0, 0, 0, 0, 0, 0, 0, 0});
    REQUIRE_THROWS_AS(compare_reports(a, c), config_error);
}

TEST_CASE("model trajectory at t=0 matches the uniform initial state") {
    Model m = tiny_model(61);
    auto p = sample_fourier_protocol(FourierProtocolSpec{}, m.op.grid(), 62);
    auto rep = evaluate_trajectory(m, p, {0.0, 0.5}, 2000, 63);
    REQUIRE(rep.rows.size() == 2);
    // zero-initialized head pins the uniform |+> state at every t
    REQUIRE_THAT(rep.rows[0].x, Catch::Matchers::WithinAbs(1.0, 1e-9));
    REQUIRE_THAT(rep.rows[0].zz, Catch::Matchers::WithinAbs(0.0, 0.1));
    REQUIRE(rep.rows[0].zz_err > 0);
    REQUIRE(rep.meta.at("source") == "model");
}

TEST_CASE("oracle trajectory matches direct dense measurement") {
    auto lat = build_lattice(2, 2);
    HamiltonianSpec ham;
    TimeGrid grid(1.0, 50);
    auto p = sample_fourier_protocol(FourierProtocolSpec{}, grid, 64);
    auto psi0 = initial_state_plus(lat.n);
    auto rep = oracle_trajectory(lat, ham, p, psi0, {0.8, 0.0, 0.4});
    REQUIRE(rep.rows.size() == 3);
    REQUIRE(rep.rows[0].t == 0.0);
    REQUIRE_THAT(rep.rows[0].x, Catch::Matchers::WithinAbs(1.0, 1e-9));
    REQUIRE(rep.rows[0].x_err == 0);

    OracleWorkspace ws(lat, ham);
    auto prop = propagate(ws, p, psi0, {0.4});
    auto obs = measure(ws, prop.states[0], p.hx_at(0.4), p.hz_at(0.4));
    REQUIRE_THAT(rep.rows[1].e, Catch::Matchers::WithinAbs(obs.energy, 1e-12));
    REQUIRE_THAT(rep.rows[1].zz, Catch::Matchers::WithinAbs(obs.szz, 1e-12));
}

TEST_CASE("svg plots render lines, bands, and reject bad input") {
    PlotSpec spec;
    spec.title = "energy";
    spec.y_label = "E";
    PlotSeries s;
    s.label = "model";
    s.x = {0, 0.5, 1.0};
    s.y = {1.0, 0.5, 0.25};
    s.y_err = {0.1, 0.1, 0.1};
    spec.series.push_back(s);
    PlotSeries o;
    o.label = "oracle";
    o.x = {0, 0.5, 1.0};
    o.y = {1.0, 0.45, 0.3};
    o.color = "#b22222";
    spec.series.push_back(o);
    std::string svg = render_svg(spec);
    REQUIRE(svg.find("<svg") != std::string::npos);
    REQUIRE(svg.find("polyline") != std::string::npos);
    REQUIRE(svg.find("polygon") != std::string::npos); // the error band
    REQUIRE(svg.find("oracle") != std::string::npos);
    REQUIRE(svg.find("energy") != std::string::npos);

    PlotSpec empty;
    REQUIRE_THROWS_AS(render_svg(empty), config_error);
    PlotSpec mismatched;
    PlotSeries bad;
    bad.x = {0, 1};
    bad.y = {0};
    mismatched.series.push_back(bad);
    REQUIRE_THROWS_AS(render_svg(mismatched), config_error);
}
