#include "citl/renderer.hpp"

#include <chrono>
#include <csignal>
#include <regex>
#include <thread>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "citl/error.hpp"
#include "citl/image.hpp"
#include "citl/util.hpp"

extern char** environ;

namespace citl {

using nlohmann::json;

void Viewport::validate() const {
  if (width <= 0 || height <= 0) throw ConfigError("viewport width and height must be positive");
  if (max_page_height < height) throw ConfigError("viewport max_page_height must be >= height");
}

// ---------------------------------------------------------------------------

WebDriverClient::WebDriverClient(std::string driver_url, double command_timeout_seconds)
    : timeout_(command_timeout_seconds) {
  const auto scheme_end = driver_url.find("://");
  const auto path_start =
      driver_url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  origin_ = driver_url.substr(0, path_start);
  prefix_ = path_start == std::string::npos ? "" : driver_url.substr(path_start);
  while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
}

json WebDriverClient::call(const std::string& method, const std::string& path, const json* body) {
  httplib::Client client(origin_);
  client.set_connection_timeout(std::chrono::seconds(5));
  const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
      std::chrono::duration<double>(timeout_));
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  const std::string full = prefix_ + path;

  httplib::Result result;
  if (method == "GET") {
    result = client.Get(full);
  } else if (method == "DELETE") {
    result = client.Delete(full);
  } else {
    result = client.Post(full, body ? body->dump() : std::string("{}"), "application/json");
  }
  if (!result) {
    const auto err = result.error();
    const std::string code = err == httplib::Error::Read ? "timeout" : "unreachable";
    throw WebDriverError(code, fmt::format("{} {}: {}", method, path, httplib::to_string(err)));
  }
  json parsed = json::parse(result->body, nullptr, false);
  if (parsed.is_discarded()) {
    throw WebDriverError("unknown error", fmt::format("{} {}: non-JSON reply (HTTP {})", method, path,
                                                      result->status));
  }
  json value = parsed.contains("value") ? parsed["value"] : json();
  if (result->status != 200) {
    std::string code = "unknown error";
    std::string message;
    if (value.is_object()) {
      code = value.value("error", code);
      message = value.value("message", "");
    }
    throw WebDriverError(code, fmt::format("{} {}: {} {}", method, path, code, message.substr(0, 300)));
  }
  return value;
}

bool WebDriverClient::ready() {
  try {
    const auto value = call("GET", "/status", nullptr);
    return value.is_object() && value.value("ready", false);
  } catch (const WebDriverError&) {
    return false;
  }
}

std::string WebDriverClient::new_session(const json& capabilities) {
  const json body = {{"capabilities", capabilities}};
  const auto value = call("POST", "/session", &body);
  return value.at("sessionId").get<std::string>();
}

void WebDriverClient::delete_session(const std::string& session) {
  call("DELETE", "/session/" + session, nullptr);
}

void WebDriverClient::navigate(const std::string& session, const std::string& url) {
  const json body = {{"url", url}};
  call("POST", "/session/" + session + "/url", &body);
}

json WebDriverClient::execute(const std::string& session, const std::string& script) {
  const json body = {{"script", script}, {"args", json::array()}};
  return call("POST", "/session/" + session + "/execute/sync", &body);
}

void WebDriverClient::set_window_rect(const std::string& session, int width, int height) {
  const json body = {{"width", width}, {"height", height}};
  call("POST", "/session/" + session + "/window/rect", &body);
}

std::vector<std::uint8_t> WebDriverClient::screenshot(const std::string& session) {
  const auto value = call("GET", "/session/" + session + "/screenshot", nullptr);
  return base64_decode(value.get<std::string>());
}

// ---------------------------------------------------------------------------

int pick_free_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw BrowserUnavailable("socket() failed");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  socklen_t len = sizeof addr;
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
      ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) != 0) {
    ::close(fd);
    throw BrowserUnavailable("cannot reserve a local port");
  }
  const int port = ntohs(addr.sin_port);
  ::close(fd);
  return port;
}

DriverProcess::DriverProcess(const std::filesystem::path& binary, int port,
                             std::vector<std::string> extra_args) {
  if (!std::filesystem::exists(binary)) {
    throw BrowserUnavailable(fmt::format("driver binary {} not found", binary.string()));
  }
  std::vector<std::string> args = {binary.string(), fmt::format("--port={}", port)};
  args.insert(args.end(), extra_args.begin(), extra_args.end());
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, "/dev/null", O_WRONLY, 0);
  posix_spawn_file_actions_addopen(&actions, STDERR_FILENO, "/dev/null", O_WRONLY, 0);
  pid_t pid = -1;
  const int rc = posix_spawn(&pid, argv[0], &actions, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  if (rc != 0) throw BrowserUnavailable(fmt::format("cannot start {}: errno {}", binary.string(), rc));
  pid_ = pid;
  url_ = fmt::format("http://127.0.0.1:{}", port);

  WebDriverClient probe(url_, 2.0);
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(15);
  while (!probe.ready()) {
    int status = 0;
    if (::waitpid(pid_, &status, WNOHANG) == pid_) {
      pid_ = -1;
      throw BrowserUnavailable(fmt::format("{} exited during startup", binary.string()));
    }
    if (std::chrono::steady_clock::now() > deadline) {
      throw BrowserUnavailable(fmt::format("{} not ready after 15 s", binary.string()));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

DriverProcess::~DriverProcess() {
  if (pid_ <= 0) return;
  ::kill(pid_, SIGTERM);
  for (int i = 0; i < 100; ++i) {
    int status = 0;
    if (::waitpid(pid_, &status, WNOHANG) == pid_) return;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  ::kill(pid_, SIGKILL);
  ::waitpid(pid_, nullptr, 0);
}

// ---------------------------------------------------------------------------

SessionPool::SessionPool(WebDriverClient& client, json capabilities, int size)
    : client_(client), capabilities_(std::move(capabilities)), size_(size), slots_(static_cast<std::size_t>(size)) {
  if (size <= 0) throw ConfigError("renderer pool size must be positive");
}

SessionPool::~SessionPool() {
  for (auto& slot : slots_) {
    if (slot.session.empty()) continue;
    try {
      client_.delete_session(slot.session);
    } catch (const std::exception& e) {
      spdlog::debug("closing session {}: {}", slot.session, e.what());
    }
  }
}

int SessionPool::live_sessions() const {
  std::lock_guard lock(mutex_);
  int n = 0;
  for (const auto& s : slots_) n += s.session.empty() ? 0 : 1;
  return n;
}

SessionPool::Lease SessionPool::acquire() {
  std::unique_lock lock(mutex_);
  int index = -1;
  cv_.wait(lock, [&] {
    // Prefer an idle live session; fall back to an empty slot.
    for (int i = 0; i < size_; ++i) {
      if (!slots_[i].busy && !slots_[i].session.empty()) {
        index = i;
        return true;
      }
    }
    for (int i = 0; i < size_; ++i) {
      if (!slots_[i].busy) {
        index = i;
        return true;
      }
    }
    return false;
  });
  Slot& slot = slots_[index];
  slot.busy = true;
  const int now_in_use = ++in_use_;
  int peak = peak_in_use_.load();
  while (now_in_use > peak && !peak_in_use_.compare_exchange_weak(peak, now_in_use)) {
  }

  if (slot.session.empty()) {
    lock.unlock();
    std::string id;
    try {
      id = client_.new_session(capabilities_);
    } catch (const std::exception& e) {
      release(index, true);
      throw BrowserUnavailable(fmt::format("cannot open browser session: {}", e.what()));
    }
    lock.lock();
    slot.session = id;
    slot.chrome_delta.reset();
    ++created_;
    int live = 0;
    for (const auto& s : slots_) live += s.session.empty() ? 0 : 1;
    int peak_live = peak_live_.load();
    while (live > peak_live && !peak_live_.compare_exchange_weak(peak_live, live)) {
    }
  }
  return Lease(this, slot.session, index);
}

void SessionPool::release(int index, bool broken) {
  std::string doomed;
  {
    std::lock_guard lock(mutex_);
    Slot& slot = slots_[index];
    if (broken && !slot.session.empty()) {
      doomed = slot.session;
      slot.session.clear();
      slot.chrome_delta.reset();
    }
  }
  if (!doomed.empty()) {
    try {
      client_.delete_session(doomed);
    } catch (const std::exception& e) {
      spdlog::debug("recycling session {}: {}", doomed, e.what());
    }
  }
  {
    std::lock_guard lock(mutex_);
    slots_[index].busy = false;
    --in_use_;
  }
  cv_.notify_one();
}

SessionPool::Lease::Lease(SessionPool* pool, std::string id, int slot)
    : pool_(pool), id_(std::move(id)), slot_(slot) {}

SessionPool::Lease::Lease(Lease&& other) noexcept
    : pool_(std::exchange(other.pool_, nullptr)), id_(std::move(other.id_)), slot_(other.slot_), broken_(other.broken_) {}

SessionPool::Lease::~Lease() {
  if (pool_) pool_->release(slot_, broken_);
}

std::optional<std::pair<int, int>>& SessionPool::Lease::chrome_delta() {
  // Only the lease holder touches its slot while busy.
  return pool_->slots_[static_cast<std::size_t>(slot_)].chrome_delta;
}

// ---------------------------------------------------------------------------

namespace {

json chrome_capabilities(const WebDriverSettings& s, const Viewport& initial) {
  std::vector<std::string> args = {
      "--headless=new",        "--no-sandbox",          "--disable-gpu",
      "--disable-dev-shm-usage", "--hide-scrollbars",   "--force-device-scale-factor=1",
      "--mute-audio",          "--no-first-run",
      fmt::format("--window-size={},{}", initial.width, initial.height),
  };
  args.insert(args.end(), s.browser_args.begin(), s.browser_args.end());
  json chrome = {{"args", args}};
  if (!s.browser_path.empty()) chrome["binary"] = s.browser_path.string();
  const auto ms = [](double seconds) { return static_cast<std::int64_t>(seconds * 1000); };
  return {{"alwaysMatch",
           {{"pageLoadStrategy", "normal"},
            {"timeouts", {{"pageLoad", ms(s.page_load_timeout_seconds)}, {"script", ms(s.page_load_timeout_seconds)}}},
            {"goog:chromeOptions", chrome}}}};
}

bool is_session_loss(const std::string& code) {
  return code == "invalid session id" || code == "unreachable" || code == "session not created";
}

constexpr const char* k_page_height_script =
    "const d = document.documentElement, b = document.body;"
    "return Math.max(d ? d.scrollHeight : 0, b ? b.scrollHeight : 0, d ? d.offsetHeight : 0);";
constexpr const char* k_viewport_script = "return [window.innerWidth, window.innerHeight];";

}  // namespace

std::string swap_tailwind_cdn(std::string_view html, const std::filesystem::path& stylesheet) {
  static const std::regex cdn_script(
      R"(<script[^>]*src\s*=\s*["']?https?://cdn\.tailwindcss\.com[^>]*>\s*</script>)",
      std::regex::icase);
  const std::string replacement =
      stylesheet.empty()
          ? std::string()
          : fmt::format(R"(<link rel="stylesheet" href="file://{}">)",
                        std::filesystem::absolute(stylesheet).string());
  return std::regex_replace(std::string(html), cdn_script, replacement);
}

void save_png(const std::filesystem::path& path, const Screenshot& shot) { write_binary(path, shot.png); }

WebDriverRenderer::WebDriverRenderer(WebDriverSettings settings) : settings_(std::move(settings)) {
  std::string url = settings_.webdriver_url;
  if (url.empty()) {
    const int port = settings_.port > 0 ? settings_.port : pick_free_port();
    process_ = std::make_unique<DriverProcess>(settings_.driver_path, port);
    url = process_->url();
  }
  client_ = std::make_unique<WebDriverClient>(url, settings_.command_timeout_seconds);
  if (!client_->ready()) throw BrowserUnavailable(fmt::format("WebDriver at {} is not ready", url));
  pool_ = std::make_unique<SessionPool>(*client_, chrome_capabilities(settings_, Viewport{}),
                                        settings_.pool_size);
}

WebDriverRenderer::~WebDriverRenderer() {
  pool_.reset();
  client_.reset();
  process_.reset();
}

std::string WebDriverRenderer::prepare_document(std::string_view html) const {
  if (!settings_.offline) return std::string(html);
  return swap_tailwind_cdn(html, settings_.offline_stylesheet);
}

Screenshot WebDriverRenderer::render(std::string_view html, const Viewport& viewport) {
  viewport.validate();
  const auto started = std::chrono::steady_clock::now();

  const auto dir = settings_.temp_dir.empty() ? std::filesystem::temp_directory_path() : settings_.temp_dir;
  const auto file = dir / fmt::format("citl-render-{}-{}.html", ::getpid(), counter_++);
  write_file(file, prepare_document(html));
  struct Cleanup {
    std::filesystem::path path;
    ~Cleanup() {
      std::error_code ec;
      std::filesystem::remove(path, ec);
    }
  } cleanup{file};

  auto lease = pool_->acquire();
  const std::string& session = lease.id();
  try {
    // Window size = viewport + browser chrome; measure the chrome once per session.
    auto& delta = lease.chrome_delta();
    if (!delta) {
      client_->set_window_rect(session, viewport.width, viewport.height);
      const auto inner = client_->execute(session, k_viewport_script);
      delta = std::pair{viewport.width - inner.at(0).get<int>(), viewport.height - inner.at(1).get<int>()};
    }
    client_->set_window_rect(session, viewport.width + delta->first, viewport.height + delta->second);

    try {
      client_->navigate(session, "file://" + std::filesystem::absolute(file).string());
    } catch (const WebDriverClient::WebDriverError& e) {
      // The load event never came; capture whatever is on screen.
      if (e.code != "timeout") throw;
      spdlog::debug("page load timed out, capturing anyway");
    }
    std::this_thread::sleep_for(std::chrono::duration<double>(settings_.settle_seconds));

    int target_height = viewport.height;
    if (viewport.full_page) {
      const auto page_height = client_->execute(session, k_page_height_script);
      if (page_height.is_number()) {
        target_height = std::clamp(page_height.get<int>(), viewport.height, viewport.max_page_height);
      }
      if (target_height != viewport.height) {
        client_->set_window_rect(session, viewport.width + delta->first, target_height + delta->second);
      }
    }

    Screenshot shot;
    auto image = decode_png(client_->screenshot(session));
    if (image.width != viewport.width || image.height != target_height) {
      if (image.width < viewport.width || image.height < target_height) {
        // Window managers may refuse very tall windows; keep what we got.
        spdlog::debug("capture {}x{} smaller than requested {}x{}", image.width, image.height,
                      viewport.width, target_height);
        if (image.width < viewport.width) {
          throw RenderTimeout(fmt::format("capture width {} below requested {}", image.width, viewport.width));
        }
      }
      image = image.cropped(viewport.width, target_height);
      shot.png = encode_png(image);
    } else {
      shot.png = encode_png(image);
    }
    shot.width = image.width;
    shot.height = image.height;
    shot.blank = is_blank(image);
    shot.render_latency = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    // Leave the session on an empty page so the next render starts clean.
    try {
      client_->navigate(session, "about:blank");
    } catch (const WebDriverClient::WebDriverError&) {
      lease.mark_broken();
    }
    return shot;
  } catch (const WebDriverClient::WebDriverError& e) {
    lease.mark_broken();
    if (is_session_loss(e.code)) throw BrowserUnavailable(e.what());
    throw RenderTimeout(e.what());
  } catch (...) {
    lease.mark_broken();
    throw;
  }
}

}  // namespace citl
