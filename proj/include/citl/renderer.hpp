#pragma once

// HTML -> PNG screenshots through a WebDriver endpoint (chromedriver or any
// W3C-compliant driver), with a bounded pool of browser sessions.

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace citl {

struct Viewport {
  int width = 1280;
  int height = 800;
  bool full_page = true;
  int max_page_height = 4000;

  void validate() const;  // throws ConfigError
};

struct Screenshot {
  std::vector<std::uint8_t> png;
  int width = 0;
  int height = 0;
  bool blank = false;
  double render_latency = 0;  // seconds
};

/// Anything that can turn a document into a screenshot.
class PageRenderer {
 public:
  virtual ~PageRenderer() = default;
  virtual Screenshot render(std::string_view html, const Viewport& viewport) = 0;
};

/// Minimal W3C WebDriver client bound to one driver URL. Each call is a
/// blocking HTTP round trip; errors come back as WebDriverError carrying the
/// protocol error code ("timeout", "invalid session id", ...).
class WebDriverClient {
 public:
  struct WebDriverError : std::runtime_error {
    WebDriverError(std::string code, const std::string& message)
        : std::runtime_error(message), code(std::move(code)) {}
    std::string code;
  };

  WebDriverClient(std::string driver_url, double command_timeout_seconds);

  bool ready();
  std::string new_session(const nlohmann::json& capabilities);
  void delete_session(const std::string& session);
  void navigate(const std::string& session, const std::string& url);
  nlohmann::json execute(const std::string& session, const std::string& script);
  void set_window_rect(const std::string& session, int width, int height);
  std::vector<std::uint8_t> screenshot(const std::string& session);

 private:
  nlohmann::json call(const std::string& method, const std::string& path, const nlohmann::json* body);

  std::string origin_;
  std::string prefix_;
  double timeout_;
};

/// A driver binary started as a child process, terminated on destruction.
class DriverProcess {
 public:
  DriverProcess(const std::filesystem::path& binary, int port, std::vector<std::string> extra_args = {});
  ~DriverProcess();
  DriverProcess(const DriverProcess&) = delete;
  DriverProcess& operator=(const DriverProcess&) = delete;

  const std::string& url() const { return url_; }

 private:
  int pid_ = -1;
  std::string url_;
};

int pick_free_port();

struct WebDriverSettings {
  std::string webdriver_url;               // external driver; empty = spawn driver_path
  std::filesystem::path driver_path;
  int port = 0;                            // 0 = pick a free port
  std::filesystem::path browser_path;      // goog:chromeOptions.binary when set
  std::vector<std::string> browser_args;   // appended to the defaults
  int pool_size = 4;
  double settle_seconds = 1.5;
  double page_load_timeout_seconds = 20;
  double command_timeout_seconds = 60;
  bool offline = false;
  std::filesystem::path offline_stylesheet;  // swapped in for the Tailwind CDN when offline
  std::filesystem::path temp_dir;            // defaults to the system temp directory
};

/// Bounded set of live browser sessions. Sessions are created lazily, at most
/// `size` exist at any time, and a lease marked broken is deleted instead of
/// returned so the next acquirer gets a fresh one.
class SessionPool {
 public:
  SessionPool(WebDriverClient& client, nlohmann::json capabilities, int size);
  ~SessionPool();

  class Lease {
   public:
    Lease(SessionPool* pool, std::string id, int slot);
    Lease(Lease&& other) noexcept;
    Lease& operator=(Lease&&) = delete;
    ~Lease();

    const std::string& id() const { return id_; }
    void mark_broken() { broken_ = true; }
    std::optional<std::pair<int, int>>& chrome_delta();

   private:
    SessionPool* pool_;
    std::string id_;
    int slot_;
    bool broken_ = false;
  };

  Lease acquire();

  int size() const { return size_; }
  int in_use() const { return in_use_.load(); }
  int peak_in_use() const { return peak_in_use_.load(); }
  int live_sessions() const;
  int peak_live_sessions() const { return peak_live_.load(); }
  int sessions_created() const { return created_.load(); }

 private:
  struct Slot {
    std::string session;  // empty until created
    bool busy = false;
    std::optional<std::pair<int, int>> chrome_delta;  // window size minus viewport size
  };
  void release(int slot, bool broken);

  WebDriverClient& client_;
  nlohmann::json capabilities_;
  int size_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::vector<Slot> slots_;
  std::atomic<int> in_use_{0};
  std::atomic<int> peak_in_use_{0};
  std::atomic<int> peak_live_{0};
  std::atomic<int> created_{0};
};

class WebDriverRenderer final : public PageRenderer {
 public:
  explicit WebDriverRenderer(WebDriverSettings settings);
  ~WebDriverRenderer() override;

  /// Loads the document from a temporary file URL, waits for the load event
  /// plus the settle delay, grows the window to the page height (full-page,
  /// capped at max_page_height) and captures. Pages that keep running
  /// scripts are captured anyway; a page that blocks the browser entirely
  /// raises RenderTimeout and its session is recycled.
  Screenshot render(std::string_view html, const Viewport& viewport) override;

  const SessionPool& pool() const { return *pool_; }

 private:
  std::string prepare_document(std::string_view html) const;

  WebDriverSettings settings_;
  std::unique_ptr<DriverProcess> process_;
  std::unique_ptr<WebDriverClient> client_;
  std::unique_ptr<SessionPool> pool_;
  std::atomic<unsigned> counter_{0};
};

/// Replaces Tailwind CDN script tags with a link to a local stylesheet
/// (or drops them when no stylesheet is given).
std::string swap_tailwind_cdn(std::string_view html, const std::filesystem::path& stylesheet);

/// Persists a screenshot and returns its blank flag/dimensions unchanged.
void save_png(const std::filesystem::path& path, const Screenshot& shot);

}  // namespace citl
