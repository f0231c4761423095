use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand};
use crossterm::event::{self, Event, KeyboardEnhancementFlags};
use crossterm::{execute, terminal};
use nxtbridge_core::clock::SystemClock;
use nxtbridge_core::drive::DriveConfig;
use nxtbridge_core::link::{Endpoint, Link, LinkConfig, LinkEvent};
use nxtbridge_core::logicprog::{Executor, LogicProgram, RunStatus};
use nxtbridge_core::simbrick::{self, SimConfig};
use nxtbridge_core::telegram;
use nxtbridge_service::server::{self, DEFAULT_LISTEN};
use nxtbridge_service::{SessionConfig, SessionHandle};

use nxtbridge_cli::exit;
use nxtbridge_cli::teleop::{self, KeyInput, Teleop};

const TARGET_ENV: &str = "NXTBRIDGE_TARGET";
const EMBEDDED_SIM: &str = "inproc:nxtbridge-sim";

#[derive(Parser)]
#[command(name = "nxtbridge", version, about = "Drive an NXT brick or its simulator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the simulated brick until interrupted.
    Sim {
        /// Endpoint to listen on, e.g. tcp:127.0.0.1:40051.
        #[arg(long)]
        listen: Endpoint,
        /// Write the pose trace as CSV here on exit.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Simulator settings (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Execute a program file and report progress.
    Run {
        program: PathBuf,
        #[arg(long, env = TARGET_ENV)]
        target: Endpoint,
    },
    /// Drive with the arrow keys (or WASD). Space stops, q quits.
    Teleop {
        #[arg(long, env = TARGET_ENV)]
        target: Endpoint,
    },
    /// Serve the WebSocket session and the console files.
    Serve {
        #[arg(long, default_value = DEFAULT_LISTEN)]
        listen: SocketAddr,
        /// Default robot endpoint for connect requests without a target.
        #[arg(long, env = TARGET_ENV)]
        target: Option<Endpoint>,
        /// Start an in-process simulator and make it the default target.
        #[arg(long)]
        with_sim: bool,
        /// Directory with the console files.
        #[arg(long)]
        static_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        telemetry_ms: u64,
    },
    /// Print a telegram given as hex bytes.
    Decode {
        /// Bytes such as "80 03 B8 01 F4 01".
        #[arg(num_args = 1.., required = true)]
        hex: Vec<String>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let code = match Cli::parse().command {
        Cmd::Sim { listen, trace, config } => sim(listen, trace, config),
        Cmd::Run { program, target } => run(program, target),
        Cmd::Teleop { target } => teleop(target),
        Cmd::Serve { listen, target, with_sim, static_dir, telemetry_ms } => {
            serve(listen, target, with_sim, static_dir, telemetry_ms)
        }
        Cmd::Decode { hex } => decode(&hex.concat()),
    };
    ExitCode::from(code as u8)
}

fn interrupt_channel() -> mpsc::Receiver<()> {
    let (tx, rx) = mpsc::channel();
    if let Err(e) = ctrlc::set_handler(move || {
        let _ = tx.send(());
    }) {
        eprintln!("warning: cannot handle interrupts: {e}");
    }
    rx
}

fn sim(listen: Endpoint, trace: Option<PathBuf>, config: Option<PathBuf>) -> i32 {
    let cfg = match config {
        None => SimConfig::default(),
        Some(path) => {
            let parsed = std::fs::read_to_string(&path)
                .map_err(|e| e.to_string())
                .and_then(|text| toml::from_str::<SimConfig>(&text).map_err(|e| e.to_string()));
            match parsed {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("error: {}: {e}", path.display());
                    return exit::USAGE;
                }
            }
        }
    };
    let interrupted = interrupt_channel();
    let handle = match simbrick::serve(&listen, cfg) {
        Ok(h) => h,
        Err(simbrick::SimError::Config(e)) => {
            eprintln!("error: {e}");
            return exit::USAGE;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return exit::CONNECT;
        }
    };
    if trace.is_some() {
        handle.enable_trace();
    }
    println!("simulator listening on {}", handle.endpoint());
    let _ = std::io::stdout().flush();
    let _ = interrupted.recv();
    if let Some(path) = trace {
        if let Err(e) = std::fs::write(&path, handle.trace_csv()) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return exit::RUNTIME;
        }
    }
    handle.shutdown();
    exit::OK
}

/// Connects, printing the link's warning text on failure.
fn connect(target: &Endpoint) -> Result<Link, i32> {
    let link = Link::new(LinkConfig::default());
    let events = link.subscribe();
    match link.connect(target) {
        Ok(_) => Ok(link),
        Err(e) => {
            let warning = events.try_iter().find_map(|ev| match ev {
                LinkEvent::Warning(w) => Some(w.text),
                _ => None,
            });
            eprintln!("error: cannot connect to {target}: {e}");
            if let Some(text) = warning {
                eprintln!("{text}");
            }
            Err(exit::CONNECT)
        }
    }
}

fn run(path: PathBuf, target: Endpoint) -> i32 {
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            return exit::USAGE;
        }
    };
    let program = match LogicProgram::parse(&text) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {}:{}:{}: {}", path.display(), e.line, e.column, e.reason);
            return exit::USAGE;
        }
    };
    let link = match connect(&target) {
        Ok(l) => l,
        Err(code) => return code,
    };
    let exec = Arc::new(Executor::new(link.clone(), SystemClock::shared()));
    let interrupted = Arc::new(AtomicBool::new(false));
    {
        let (exec, interrupted) = (exec.clone(), interrupted.clone());
        if let Err(e) = ctrlc::set_handler(move || {
            interrupted.store(true, Ordering::SeqCst);
            exec.cancel();
        }) {
            eprintln!("warning: cannot handle interrupts: {e}");
        }
    }
    let steps = program.steps().to_vec();
    let status = exec.run(&program, &DriveConfig::default(), |i| {
        println!("step {}/{}: {}", i + 1, steps.len(), steps[i]);
        let _ = std::io::stdout().flush();
    });
    link.disconnect();
    match status {
        Ok(RunStatus::Finished) => {
            println!("finished");
            exit::OK
        }
        Ok(RunStatus::Cancelled { step }) => {
            eprintln!("interrupted at step {}; motors stopped", step + 1);
            if interrupted.load(Ordering::SeqCst) {
                exit::INTERRUPTED
            } else {
                exit::RUNTIME
            }
        }
        Ok(RunStatus::Failed { step, reason }) => {
            eprintln!("error: step {} failed: {reason}", step + 1);
            exit::RUNTIME
        }
        Ok(other) => {
            eprintln!("error: run ended as {other:?}");
            exit::RUNTIME
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit::RUNTIME
        }
    }
}

fn teleop(target: Endpoint) -> i32 {
    let link = match connect(&target) {
        Ok(l) => l,
        Err(code) => return code,
    };
    if let Err(e) = terminal::enable_raw_mode() {
        eprintln!("error: teleop needs an interactive terminal: {e}");
        link.disconnect();
        return exit::USAGE;
    }
    let releases = matches!(terminal::supports_keyboard_enhancement(), Ok(true))
        && execute!(
            std::io::stdout(),
            event::PushKeyboardEnhancementFlags(KeyboardEnhancementFlags::REPORT_EVENT_TYPES)
        )
        .is_ok();
    eprint!("connected to {target}. arrows or WASD drive, space stops, q quits\r\n");
    let code = teleop_loop(&link, Teleop::new(releases));
    if releases {
        let _ = execute!(std::io::stdout(), event::PopKeyboardEnhancementFlags);
    }
    let _ = terminal::disable_raw_mode();
    link.disconnect();
    code
}

fn teleop_loop(link: &Link, mut state: Teleop) -> i32 {
    let cfg = DriveConfig::default();
    loop {
        let now = Instant::now();
        let mut out = state.tick(now);
        let mut quit = false;
        match event::poll(state.poll_timeout(now)) {
            Ok(true) => match event::read() {
                Ok(Event::Key(key)) => {
                    if let Some(input) = teleop::key_input(&key) {
                        quit = input == KeyInput::Quit;
                        out = out.or(state.key(input, Instant::now()));
                    }
                }
                Ok(_) => {}
                Err(e) => {
                    eprint!("error: {e}\r\n");
                    return exit::RUNTIME;
                }
            },
            Ok(false) => out = out.or(state.tick(Instant::now())),
            Err(e) => {
                eprint!("error: {e}\r\n");
                return exit::RUNTIME;
            }
        }
        if let Some(cmd) = out {
            if let Err(e) = teleop::send(link, cmd, &cfg) {
                eprint!("error: {e}\r\n");
                return exit::RUNTIME;
            }
        }
        if quit {
            return exit::OK;
        }
    }
}

fn serve(
    listen: SocketAddr,
    target: Option<Endpoint>,
    with_sim: bool,
    static_dir: Option<PathBuf>,
    telemetry_ms: u64,
) -> i32 {
    let embedded = if with_sim {
        let ep: Endpoint = EMBEDDED_SIM.parse().expect("valid endpoint");
        match simbrick::serve(&ep, SimConfig::default()) {
            Ok(h) => Some(h),
            Err(e) => {
                eprintln!("error: {e}");
                return exit::CONNECT;
            }
        }
    } else {
        None
    };
    let default_target = target.or_else(|| embedded.as_ref().map(|h| h.endpoint().clone()));
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return exit::RUNTIME;
        }
    };
    let session = Arc::new(SessionHandle::spawn(SessionConfig {
        default_target,
        telemetry_period: Duration::from_millis(telemetry_ms.max(1)),
        ..SessionConfig::default()
    }));
    let app = server::router(session.clone(), static_dir.as_deref());
    let interrupted = interrupt_channel();
    let code = runtime.block_on(async move {
        let listener = match tokio::net::TcpListener::bind(listen).await {
            Ok(l) => l,
            Err(e) => {
                eprintln!("error: cannot listen on {listen}: {e}");
                return exit::CONNECT;
            }
        };
        let addr = listener.local_addr().map(|a| a.to_string()).unwrap_or_else(|_| listen.to_string());
        println!("serving on http://{addr}");
        let _ = std::io::stdout().flush();
        let stop = async move {
            let _ = tokio::task::spawn_blocking(move || interrupted.recv()).await;
        };
        match server::serve(listener, app, stop).await {
            Ok(()) => exit::OK,
            Err(e) => {
                eprintln!("error: {e}");
                exit::RUNTIME
            }
        }
    });
    runtime.shutdown_timeout(Duration::from_secs(1));
    session.shutdown();
    code
}

fn decode(text: &str) -> i32 {
    let digits: String = text.chars().filter(|c| !c.is_whitespace() && *c != ':').collect();
    let bytes = match hex::decode(&digits) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error: not hex: {e}");
            return exit::USAGE;
        }
    };
    match telegram::decode(&bytes) {
        Ok(t) => {
            println!("{t}");
            exit::OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit::USAGE
        }
    }
}
