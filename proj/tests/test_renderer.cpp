#include <doctest.h>

#include <chrono>
#include <future>
#include <random>

#include <httplib.h>

#include "citl/image.hpp"
#include "citl/renderer.hpp"
#include "citl/util.hpp"
#include "support.hpp"

using namespace citl;
using namespace citl::testing;
using nlohmann::json;

namespace {

// Direct count of the most common pixel value.
double counted_modal_fraction(const RgbaImage& img) {
  std::map<std::uint32_t, long> counts;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) ++counts[img.at(x, y)];
  }
  long best = 0;
  for (const auto& [_, n] : counts) best = std::max(best, n);
  return static_cast<double>(best) / (static_cast<double>(img.width) * img.height);
}

}  // namespace

TEST_CASE("uniform image is blank") {
  RgbaImage img(200, 100, 0xFFFFFFFFu);
  CHECK(is_blank(img));
  CHECK(is_blank(encode_png(img)));
  CHECK(modal_color_fraction(img) == 1.0);
}

TEST_CASE("centered black rectangle over 10% is not blank") {
  RgbaImage img(200, 100, 0xFFFFFFFFu);
  // 2000 of 20000 pixels
  img.fill_rect(60, 30, 80, 25, 0x000000FFu);
  CHECK(counted_modal_fraction(img) == doctest::Approx(0.9));
  CHECK_FALSE(is_blank(img));
}

TEST_CASE("scattered noise at 0.4% is blank, at 1% is not") {
  std::mt19937 rng(99);
  for (double noise : {0.004, 0.01}) {
    RgbaImage img(250, 200, 0xFFFFFFFFu);
    const int total = img.width * img.height;
    const int target = static_cast<int>(total * noise);
    int painted = 0;
    while (painted < target) {
      const int x = static_cast<int>(rng() % img.width);
      const int y = static_cast<int>(rng() % img.height);
      if (img.at(x, y) != 0xFFFFFFFFu) continue;
      img.set(x, y, 0x10000000u | (rng() & 0x00FFFF00u) | 0xFFu);
      ++painted;
    }
    const double counted = counted_modal_fraction(img);
    CAPTURE(noise);
    CHECK(modal_color_fraction(img) == doctest::Approx(counted));
    CHECK(is_blank(img) == (counted >= 0.995));
    CHECK(is_blank(encode_png(img)) == (noise < 0.005));
  }
}

TEST_CASE("blank detection follows the pixel count in random images") {
  std::mt19937 rng(5);
  for (int i = 0; i < 50; ++i) {
    RgbaImage img(40 + static_cast<int>(rng() % 60), 40 + static_cast<int>(rng() % 60), 0x336699FFu);
    const int rects = static_cast<int>(rng() % 3);
    for (int r = 0; r < rects; ++r) {
      img.fill_rect(static_cast<int>(rng() % img.width), static_cast<int>(rng() % img.height),
                    1 + static_cast<int>(rng() % 5), 1 + static_cast<int>(rng() % 5), 0xFF0000FFu);
    }
    CHECK(is_blank(img) == (counted_modal_fraction(img) >= 0.995));
  }
}

TEST_CASE("png round trip and undecodable input") {
  RgbaImage img(31, 17, 0x11223344u);
  img.set(3, 4, 0xAABBCCDDu);
  const auto back = decode_png(encode_png(img));
  CHECK(back.width == 31);
  CHECK(back.height == 17);
  CHECK(back.pixels == img.pixels);
  const std::vector<std::uint8_t> junk{1, 2, 3, 4, 5};
  CHECK_THROWS_AS(decode_png(junk), UndecodableImage);
  CHECK_THROWS_AS(is_blank(std::span<const std::uint8_t>(junk)), UndecodableImage);
  CHECK(img.cropped(10, 5).width == 10);
}

TEST_CASE("tailwind CDN swap") {
  const std::string html =
      "<head><script src=\"https://cdn.tailwindcss.com\"></script><script src=\"app.js\"></script></head>";
  const auto swapped = swap_tailwind_cdn(html, "/tmp/x.css");
  CHECK(swapped.find("cdn.tailwindcss.com") == std::string::npos);
  CHECK(swapped.find("<link rel=\"stylesheet\" href=\"file:///tmp/x.css\">") != std::string::npos);
  CHECK(swapped.find("app.js") != std::string::npos);
  CHECK(swap_tailwind_cdn(html, "").find("tailwind") == std::string::npos);
  CHECK(swap_tailwind_cdn("<p>no cdn</p>", "/tmp/x.css") == "<p>no cdn</p>");
}

TEST_CASE("viewport validation") {
  Viewport v;
  CHECK_NOTHROW(v.validate());
  v.max_page_height = 100;
  CHECK_THROWS_AS(v.validate(), ConfigError);
  v = Viewport{0, 800};
  CHECK_THROWS_AS(v.validate(), ConfigError);
}

// ---------------------------------------------------------------------------
// Session pool against an in-process fake WebDriver

namespace {

struct FakeDriver {
  httplib::Server server;
  int port = 0;
  std::jthread thread;
  std::mutex mutex;
  std::map<std::string, std::pair<int, int>> windows;
  std::atomic<int> sessions{0};
  std::atomic<int> live{0};
  std::atomic<int> peak_live{0};
  std::atomic<int> deletes{0};
  std::atomic<bool> break_next_screenshot{false};

  FakeDriver() {
    server.Get("/status", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"value":{"ready":true}})", "application/json");
    });
    server.Post("/session", [this](const httplib::Request&, httplib::Response& res) {
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
      const auto id = "s" + std::to_string(++sessions);
      const int now = ++live;
      int p = peak_live.load();
      while (now > p && !peak_live.compare_exchange_weak(p, now)) {
      }
      {
        std::lock_guard lock(mutex);
        windows[id] = {800, 600};
      }
      res.set_content(json{{"value", {{"sessionId", id}}}}.dump(), "application/json");
    });
    server.Delete(R"(/session/([^/]+))", [this](const httplib::Request&, httplib::Response& res) {
      --live;
      ++deletes;
      res.set_content(R"({"value":null})", "application/json");
    });
    server.Post(R"(/session/([^/]+)/window/rect)", [this](const httplib::Request& req, httplib::Response& res) {
      const auto body = json::parse(req.body);
      std::lock_guard lock(mutex);
      windows[req.matches[1]] = {body["width"].get<int>(), body["height"].get<int>()};
      res.set_content(R"({"value":{}})", "application/json");
    });
    server.Post(R"(/session/([^/]+)/url)", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(R"({"value":null})", "application/json");
    });
    server.Post(R"(/session/([^/]+)/execute/sync)", [this](const httplib::Request& req, httplib::Response& res) {
      const auto body = json::parse(req.body);
      const std::string script = body["script"];
      std::pair<int, int> w;
      {
        std::lock_guard lock(mutex);
        w = windows[req.matches[1]];
      }
      // chrome adds 0 x 80 pixels around the viewport
      json value = script.find("innerWidth") != std::string::npos ? json::array({w.first, w.second - 80}) : json(1500);
      res.set_content(json{{"value", value}}.dump(), "application/json");
    });
    server.Get(R"(/session/([^/]+)/screenshot)", [this](const httplib::Request& req, httplib::Response& res) {
      if (break_next_screenshot.exchange(false)) {
        res.status = 404;
        res.set_content(R"({"value":{"error":"invalid session id","message":"gone"}})", "application/json");
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
      std::pair<int, int> w;
      {
        std::lock_guard lock(mutex);
        w = windows[req.matches[1]];
      }
      RgbaImage img(w.first, w.second - 80, 0xFFFFFFFFu);
      img.fill_rect(0, 0, 200, 200, 0x000000FFu);
      res.set_content(json{{"value", base64_encode(encode_png(img))}}.dump(), "application/json");
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::jthread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~FakeDriver() { server.stop(); }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }
};

WebDriverSettings fake_settings(const FakeDriver& d, int pool) {
  WebDriverSettings s;
  s.webdriver_url = d.url();
  s.pool_size = pool;
  s.settle_seconds = 0;
  return s;
}

}  // namespace

TEST_CASE("fake driver: full-page capture clipped to max height") {
  FakeDriver driver;
  WebDriverRenderer renderer(fake_settings(driver, 1));
  Viewport v{1280, 800, true, 1200};
  const auto shot = renderer.render("<p>hi</p>", v);
  CHECK(shot.width == 1280);
  CHECK(shot.height == 1200);
  CHECK_FALSE(shot.blank);
  CHECK(decode_png(shot.png).height == 1200);
  v.full_page = false;
  CHECK(renderer.render("<p>hi</p>", v).height == 800);
}

TEST_CASE("fake driver: pool stays bounded under 16 concurrent renders") {
  FakeDriver driver;
  {
    WebDriverRenderer renderer(fake_settings(driver, 3));
    std::vector<std::future<int>> futures;
    for (int i = 0; i < 16; ++i) {
      futures.push_back(std::async(std::launch::async, [&] {
        return renderer.render("<p>x</p>", Viewport{640, 400, false, 4000}).width;
      }));
    }
    for (auto& f : futures) CHECK(f.get() == 640);
    CHECK(renderer.pool().peak_in_use() <= 3);
    CHECK(renderer.pool().peak_live_sessions() <= 3);
    CHECK(driver.peak_live.load() <= 3);
    CHECK(renderer.pool().sessions_created() <= 3);
    CHECK(renderer.pool().in_use() == 0);
  }
  CHECK(driver.live.load() == 0);
}

TEST_CASE("fake driver: a lost session is recycled") {
  FakeDriver driver;
  WebDriverRenderer renderer(fake_settings(driver, 1));
  Viewport v{320, 200, false, 4000};
  renderer.render("<p>a</p>", v);
  driver.break_next_screenshot = true;
  CHECK_THROWS_AS(renderer.render("<p>b</p>", v), BrowserUnavailable);
  CHECK(renderer.render("<p>c</p>", v).width == 320);
  CHECK(renderer.pool().sessions_created() == 2);
}

TEST_CASE("unreachable driver") {
  WebDriverSettings s;
  s.webdriver_url = "http://127.0.0.1:1";
  CHECK_THROWS_AS(WebDriverRenderer{s}, BrowserUnavailable);
  WebDriverSettings missing;
  missing.driver_path = "/nonexistent/chromedriver";
  CHECK_THROWS_AS(WebDriverRenderer{missing}, BrowserUnavailable);
}

// ---------------------------------------------------------------------------
// Real browser

TEST_CASE("browser: minimal page, blank page, runaway script, concurrency") {
  if (!browser_available()) {
    MESSAGE("browser not installed; skipping (run tools/fetch_browser.sh)");
    return;
  }
  WebDriverRenderer renderer(test_browser_settings(4));
  const Viewport v{1280, 800, true, 4000};

  SUBCASE("minimal document") {
    const auto t0 = std::chrono::steady_clock::now();
    const auto shot = renderer.render(
        "<!DOCTYPE html><html><body style=\"margin:0\"><h1 style=\"font-size:64px\">Hello</h1>"
        "<div style=\"width:400px;height:300px;background:#2050c0\"></div></body></html>",
        v);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(shot.width == 1280);
    CHECK(shot.height >= 800);
    CHECK_FALSE(shot.blank);
    CHECK(secs < 5.0);
    const auto img = decode_png(shot.png);
    CHECK(img.width == 1280);
    CHECK(img.at(100, 200) != img.at(900, 700));
  }

  SUBCASE("empty body") {
    const auto shot = renderer.render("<!DOCTYPE html><html><body></body></html>", v);
    CHECK(shot.blank);
    CHECK(shot.width == 1280);
    CHECK(shot.height == 800);
  }

  SUBCASE("tall page is clipped") {
    const auto shot = renderer.render("<body style=\"margin:0\"><div style=\"height:9000px;background:"
                                      "linear-gradient(red,blue)\"></div></body>",
                                      v);
    CHECK(shot.height == 4000);
  }

  SUBCASE("script that never stops") {
    const auto t0 = std::chrono::steady_clock::now();
    const auto shot = renderer.render(
        "<body><div style=\"width:600px;height:300px;background:#c03020\"></div><script>function spin(){ document.title = Math.random(); setTimeout(spin, 0); }"
        "spin(); (async () => { while (true) { await new Promise(r => setTimeout(r, 0)); } })();</script></body>",
        v);
    CHECK(std::chrono::steady_clock::now() - t0 < std::chrono::seconds(10));
    CHECK(shot.width == 1280);
    CHECK_FALSE(shot.blank);
  }

  SUBCASE("invalid html still renders") {
    const auto shot = renderer.render("<div><p>unclosed <b>tags <table><tr><td>cell", v);
    CHECK(shot.width == 1280);
  }

  SUBCASE("16 concurrent renders") {
    std::vector<std::future<Screenshot>> futures;
    for (int i = 0; i < 16; ++i) {
      futures.push_back(std::async(std::launch::async, [&, i] {
        return renderer.render(fmt::format("<body><h1 style=\"background:#30{:02d}90;height:200px\">page {}</h1></body>", i * 5, i), Viewport{800, 600, false, 4000});
      }));
    }
    for (auto& f : futures) {
      const auto s = f.get();
      CHECK(s.width == 800);
      CHECK_FALSE(s.blank);
    }
    CHECK(renderer.pool().peak_in_use() <= 4);
    CHECK(renderer.pool().peak_live_sessions() <= 4);
  }
}
