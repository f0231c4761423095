//! Byte transports underneath a [`Link`](super::Link).
//!
//! Every transport pumps inbound bytes into a channel from a reader thread so
//! that reads can be bounded by a timeout regardless of the device type.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::thread;
use std::time::Duration;

use crossbeam_channel::{Receiver, RecvTimeoutError};

use super::inproc::{self, Chunk, InprocConnectError};
use super::{Endpoint, Scheme};

#[derive(Debug)]
pub(crate) enum OpenError {
    /// Nothing to talk to: radio off, device path missing, nobody listening.
    Unavailable(String),
    Timeout,
    Refused(String),
}

#[derive(Debug, PartialEq, Eq)]
pub(crate) enum RecvError {
    Timeout,
    Closed,
}

pub(crate) trait Transport: Send {
    fn send(&mut self, bytes: &[u8]) -> io::Result<()>;
    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, RecvError>;
    fn close(&mut self);
}

pub(crate) fn open(endpoint: &Endpoint, timeout: Duration) -> Result<Box<dyn Transport>, OpenError> {
    match endpoint.scheme() {
        Scheme::Tcp => TcpTransport::open(endpoint.address(), timeout).map(|t| Box::new(t) as _),
        Scheme::Serial => DeviceTransport::open(endpoint.address()).map(|t| Box::new(t) as _),
        Scheme::Inproc => match inproc::connect(endpoint.address()) {
            Ok(conn) => Ok(Box::new(conn)),
            Err(InprocConnectError::NotListening) => {
                Err(OpenError::Unavailable(format!("no simulator named `{}` is running", endpoint.address())))
            }
            Err(InprocConnectError::Busy) => Err(OpenError::Refused("simulator already has a client".into())),
        },
    }
}

fn spawn_reader<R: Read + Send + 'static>(mut reader: R, name: &str) -> Receiver<Vec<u8>> {
    let (tx, rx) = crossbeam_channel::unbounded();
    let spawned = thread::Builder::new().name(name.to_string()).spawn(move || {
        let mut buf = [0u8; 1024];
        loop {
            match reader.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    if tx.send(buf[..n].to_vec()).is_err() {
                        break;
                    }
                }
            }
        }
    });
    if let Err(e) = spawned {
        tracing::error!("failed to spawn transport reader: {e}");
    }
    rx
}

fn recv_chunk(rx: &Receiver<Vec<u8>>, timeout: Duration) -> Result<Vec<u8>, RecvError> {
    rx.recv_timeout(timeout).map_err(|e| match e {
        RecvTimeoutError::Timeout => RecvError::Timeout,
        RecvTimeoutError::Disconnected => RecvError::Closed,
    })
}

struct TcpTransport {
    stream: TcpStream,
    rx: Receiver<Vec<u8>>,
}

impl TcpTransport {
    fn open(address: &str, timeout: Duration) -> Result<Self, OpenError> {
        let addrs: Vec<_> = address
            .to_socket_addrs()
            .map_err(|e| OpenError::Unavailable(format!("cannot resolve {address}: {e}")))?
            .collect();
        let mut last = OpenError::Unavailable(format!("{address} resolved to no addresses"));
        for addr in addrs {
            match TcpStream::connect_timeout(&addr, timeout) {
                Ok(stream) => {
                    let _ = stream.set_nodelay(true);
                    let reader = stream.try_clone().map_err(|e| OpenError::Unavailable(e.to_string()))?;
                    let rx = spawn_reader(reader, "link-tcp-reader");
                    return Ok(TcpTransport { stream, rx });
                }
                Err(e) if e.kind() == io::ErrorKind::TimedOut => last = OpenError::Timeout,
                Err(e) => last = OpenError::Unavailable(format!("{address}: {e}")),
            }
        }
        Err(last)
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.stream.write_all(bytes)
    }

    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, RecvError> {
        recv_chunk(&self.rx, timeout)
    }

    fn close(&mut self) {
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}

/// A paired RFCOMM device or any other character device. Pairing and line
/// settings are left to the operating system.
struct DeviceTransport {
    file: Option<File>,
    rx: Receiver<Vec<u8>>,
}

impl DeviceTransport {
    fn open(path: &str) -> Result<Self, OpenError> {
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .open(path)
            .map_err(|e| OpenError::Unavailable(format!("cannot open {path}: {e}")))?;
        let reader = file.try_clone().map_err(|e| OpenError::Unavailable(e.to_string()))?;
        let rx = spawn_reader(reader, "link-serial-reader");
        Ok(DeviceTransport { file: Some(file), rx })
    }
}

impl Transport for DeviceTransport {
    fn send(&mut self, bytes: &[u8]) -> io::Result<()> {
        match self.file.as_mut() {
            Some(f) => {
                f.write_all(bytes)?;
                f.flush()
            }
            None => Err(io::ErrorKind::NotConnected.into()),
        }
    }

    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, RecvError> {
        if self.file.is_none() {
            return Err(RecvError::Closed);
        }
        recv_chunk(&self.rx, timeout)
    }

    fn close(&mut self) {
        self.file = None;
    }
}

impl Transport for inproc::ClientConn {
    fn send(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.send_bytes(bytes)
    }

    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, RecvError> {
        match self.rx().recv_timeout(timeout) {
            Ok(Chunk { bytes, .. }) => Ok(bytes),
            Err(RecvTimeoutError::Timeout) => Err(RecvError::Timeout),
            Err(RecvTimeoutError::Disconnected) => Err(RecvError::Closed),
        }
    }

    fn close(&mut self) {
        self.shutdown();
    }
}
