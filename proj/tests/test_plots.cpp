#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <regex>
#include <string>

#include "gmmd/error.hpp"
#include "gmmd/plots.hpp"

using namespace gmmd;

namespace {

std::size_t count(const std::string& s, const std::string& what) {
  std::size_t n = 0;
  for (auto pos = s.find(what); pos != std::string::npos; pos = s.find(what, pos + 1)) ++n;
  return n;
}

std::string metadata(const std::string& svg) {
  const auto b = svg.find("<![CDATA[\n");
  const auto e = svg.find("]]>");
  REQUIRE(b != std::string::npos);
  return svg.substr(b + 10, e - b - 10);
}

}  // namespace

TEST_CASE("line plot") {
  PlotOptions o;
  o.title = "Scores <by> level & type";
  o.x_label = "level";
  o.y_label = "MMD^2";
  const std::vector<PlotSeries> s{{"T1", {1, 2, 3}, {0.1, 0.2, 0.4}}, {"fit", {1, 3}, {0.05, 0.45}, false, true}};
  const auto svg = svg_line_plot(o, s);
  CHECK(svg.rfind("<svg xmlns=\"http://www.w3.org/2000/svg\"", 0) == 0);
  CHECK(svg.find("Scores &lt;by&gt; level &amp; type") != std::string::npos);
  CHECK(count(svg, "<circle") == 3);
  CHECK(count(svg, "<polyline") == 2);
  CHECK(metadata(svg) == "series,x,y\nT1,1,0.1\nT1,2,0.2\nT1,3,0.4\nfit,1,0.05\nfit,3,0.45\n");
  CHECK(svg_line_plot(o, s) == svg);
  CHECK(svg.find("</svg>\n") == svg.size() - 7);
}

TEST_CASE("log scale drops non-positive values but keeps them in the data") {
  PlotOptions o;
  o.log_y = true;
  const auto svg = svg_line_plot(o, {{"s", {1, 2, 3}, {1e-9, -1e-10, 1e-6}}});
  CHECK(count(svg, "<circle") == 2);
  CHECK(metadata(svg).find("-1e-10") != std::string::npos);
  CHECK(svg.find(">1e-9<") != std::string::npos);
  CHECK(svg.find(">1e-6<") != std::string::npos);
}

TEST_CASE("bar plot") {
  PlotOptions o;
  o.title = "ratio";
  const auto svg = svg_bar_plot(o, {"0.1x", "1x"}, {{"synthetic", {}, {2, 3}}, {"real", {}, {1, -0.5}}});
  CHECK(count(svg, "fill=\"#1f77b4\"/>") == 3);  // two bars and the legend swatch
  CHECK(metadata(svg) == "category,series,value\n0.1x,synthetic,2\n1x,synthetic,3\n0.1x,real,1\n1x,real,-0.5\n");
  CHECK_THROWS_AS(svg_bar_plot(o, {"a"}, {{"s", {}, {1, 2}}}), InputError);
}

TEST_CASE("degenerate inputs") {
  PlotOptions o;
  CHECK_NOTHROW(svg_line_plot(o, {}));
  CHECK_NOTHROW(svg_line_plot(o, {{"flat", {1, 1}, {2, 2}}}));
  CHECK_THROWS_AS(svg_line_plot(o, {{"bad", {1, 2}, {1}}}), InputError);
  o.width = 10;
  CHECK_THROWS_AS(svg_line_plot(o, {}), InputError);
}
