//! The socket transport between agent and game environment.
//!
//! The agent listens; the environment connects (one connection at a time,
//! extras are shut down on arrival). A reader thread drains the socket into
//! an ordered inbound queue; the agent-facing calls implement the blocking
//! request/response discipline: after sending `GetStatus` or `ACTION:` the
//! bridge sends nothing until the matching response arrives or the call
//! times out. Commands may arrive at any moment and are buffered, never
//! dropped; a wrongly-typed response to a pending request is a protocol
//! error.

mod wire;

pub use wire::{
    decode_message, encode_message, read_frame, write_frame, BridgeMessage, FeedbackPayload,
    OutboundFrame, ACTION_PREFIX, GET_STATUS_TEXT, MAX_FRAME_LEN,
};

use std::collections::VecDeque;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::time::{Duration, Instant};

pub const DEFAULT_STATUS_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_FEEDBACK_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, thiserror::Error)]
pub enum BridgeError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error("accept failed: {0}")]
    Accept(std::io::Error),
    #[error("socket error: {0}")]
    Io(std::io::Error),
    #[error("environment disconnected")]
    ConnectionClosed,
    #[error("timed out after {after:?} waiting for {awaiting}")]
    Timeout {
        awaiting: &'static str,
        after: Duration,
    },
    #[error("protocol violation: {reason}")]
    Protocol {
        reason: String,
        raw: Option<Vec<u8>>,
    },
}

#[derive(Debug, Clone)]
pub struct BridgeConfig {
    pub status_timeout: Duration,
    pub feedback_timeout: Duration,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        BridgeConfig {
            status_timeout: DEFAULT_STATUS_TIMEOUT,
            feedback_timeout: DEFAULT_FEEDBACK_TIMEOUT,
        }
    }
}

enum InboundEvent {
    Msg(BridgeMessage),
    Malformed { reason: String, raw: Vec<u8> },
    Closed,
}

/// A bound listener, not yet connected to an environment.
pub struct BridgeServer {
    listener: TcpListener,
    local_addr: SocketAddr,
}

/// Bind the agent-side listener. Port 0 picks an ephemeral port; see
/// [`BridgeServer::local_addr`].
pub fn serve(host: &str, port: u16) -> Result<BridgeServer, BridgeError> {
    let addr_text = format!("{host}:{port}");
    let addrs: Vec<SocketAddr> = addr_text
        .to_socket_addrs()
        .map_err(|source| BridgeError::Bind {
            addr: addr_text.clone(),
            source,
        })?
        .collect();
    let listener = TcpListener::bind(&addrs[..]).map_err(|source| BridgeError::Bind {
        addr: addr_text,
        source,
    })?;
    let local_addr = listener.local_addr().map_err(BridgeError::Io)?;
    Ok(BridgeServer {
        listener,
        local_addr,
    })
}

impl BridgeServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Block until the environment connects, then start the reader. While
    /// the returned [`Bridge`] is alive, further connection attempts are
    /// accepted and immediately shut down.
    pub fn accept(self, config: BridgeConfig) -> Result<Bridge, BridgeError> {
        let (stream, peer) = self.listener.accept().map_err(BridgeError::Accept)?;
        log::info!("environment connected from {peer}");
        stream.set_nodelay(true).ok();

        let stop = Arc::new(AtomicBool::new(false));
        let rejector_stop = stop.clone();
        let listener = self.listener;
        listener.set_nonblocking(true).map_err(BridgeError::Io)?;
        let rejector = std::thread::spawn(move || {
            while !rejector_stop.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((extra, peer)) => {
                        log::warn!("refusing extra environment connection from {peer}");
                        let _ = extra.shutdown(std::net::Shutdown::Both);
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(50));
                    }
                    Err(_) => break,
                }
            }
        });

        let reader_stream = stream.try_clone().map_err(BridgeError::Io)?;
        let (tx, rx) = std::sync::mpsc::channel();
        let reader = std::thread::spawn(move || reader_loop(reader_stream, tx));

        Ok(Bridge {
            writer: stream,
            inbound: rx,
            command_buf: VecDeque::new(),
            status_buf: VecDeque::new(),
            feedback_buf: VecDeque::new(),
            config,
            stop,
            rejector: Some(rejector),
            reader: Some(reader),
        })
    }
}

fn reader_loop(mut stream: TcpStream, tx: Sender<InboundEvent>) {
    loop {
        match read_frame(&mut stream) {
            Ok(Some(payload)) => {
                let event = match decode_message(&payload) {
                    Ok(msg) => InboundEvent::Msg(msg),
                    Err(reason) => InboundEvent::Malformed {
                        reason,
                        raw: payload,
                    },
                };
                if tx.send(event).is_err() {
                    return;
                }
            }
            Ok(None) => {
                let _ = tx.send(InboundEvent::Closed);
                return;
            }
            Err(e) => {
                log::debug!("bridge reader stopped: {e}");
                let _ = tx.send(InboundEvent::Closed);
                return;
            }
        }
    }
}

enum Awaited {
    Status,
    Feedback,
}

/// One live agent <-> environment connection.
pub struct Bridge {
    writer: TcpStream,
    inbound: Receiver<InboundEvent>,
    command_buf: VecDeque<String>,
    status_buf: VecDeque<String>,
    feedback_buf: VecDeque<FeedbackPayload>,
    config: BridgeConfig,
    stop: Arc<AtomicBool>,
    rejector: Option<std::thread::JoinHandle<()>>,
    reader: Option<std::thread::JoinHandle<()>>,
}

impl Bridge {
    fn send(&mut self, frame: &OutboundFrame) -> Result<(), BridgeError> {
        write_frame(&mut self.writer, frame.encode().as_bytes()).map_err(|e| {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                BridgeError::ConnectionClosed
            } else {
                BridgeError::Io(e)
            }
        })
    }

    /// Block until the environment sends a command message, returning its
    /// payload. Statuses and feedback arriving meanwhile are buffered.
    pub fn get_command(&mut self) -> Result<String, BridgeError> {
        if let Some(cmd) = self.command_buf.pop_front() {
            return Ok(cmd);
        }
        loop {
            match self.inbound.recv() {
                Ok(InboundEvent::Msg(BridgeMessage::Command(cmd))) => return Ok(cmd),
                Ok(InboundEvent::Msg(BridgeMessage::Status(s))) => self.status_buf.push_back(s),
                Ok(InboundEvent::Msg(BridgeMessage::Feedback(f))) => self.feedback_buf.push_back(f),
                Ok(InboundEvent::Malformed { reason, raw }) => {
                    return Err(BridgeError::Protocol {
                        reason,
                        raw: Some(raw),
                    })
                }
                Ok(InboundEvent::Closed) | Err(_) => return Err(BridgeError::ConnectionClosed),
            }
        }
    }

    /// Send `GetStatus` and block for the status response.
    pub fn get_status(&mut self) -> Result<String, BridgeError> {
        if let Some(s) = self.status_buf.pop_front() {
            return Ok(s);
        }
        self.send(&OutboundFrame::GetStatus)?;
        match self.await_response(Awaited::Status, self.config.status_timeout)? {
            BridgeMessage::Status(s) => Ok(s),
            _ => unreachable!("await_response returns the awaited type"),
        }
    }

    /// Send `ACTION:<plan>` and block for the feedback response. Feedback
    /// carrying error entries is a normal return, not a transport error.
    pub fn act_and_feedback(&mut self, plan: &str) -> Result<FeedbackPayload, BridgeError> {
        if let Some(f) = self.feedback_buf.pop_front() {
            return Ok(f);
        }
        self.send(&OutboundFrame::Action(plan.to_string()))?;
        match self.await_response(Awaited::Feedback, self.config.feedback_timeout)? {
            BridgeMessage::Feedback(f) => Ok(f),
            _ => unreachable!("await_response returns the awaited type"),
        }
    }

    /// Wait for the response matching the pending request. Commands are
    /// buffered; the other response type is a protocol violation because
    /// exactly one request is ever in flight.
    fn await_response(
        &mut self,
        awaited: Awaited,
        timeout: Duration,
    ) -> Result<BridgeMessage, BridgeError> {
        let deadline = Instant::now() + timeout;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                return Err(BridgeError::Timeout {
                    awaiting: match awaited {
                        Awaited::Status => "status",
                        Awaited::Feedback => "feedback",
                    },
                    after: timeout,
                });
            }
            match self.inbound.recv_timeout(remaining) {
                Ok(InboundEvent::Msg(BridgeMessage::Command(cmd))) => {
                    self.command_buf.push_back(cmd);
                }
                Ok(InboundEvent::Msg(msg @ BridgeMessage::Status(_))) => match awaited {
                    Awaited::Status => return Ok(msg),
                    Awaited::Feedback => {
                        return Err(BridgeError::Protocol {
                            reason: "status message received while awaiting feedback".into(),
                            raw: None,
                        })
                    }
                },
                Ok(InboundEvent::Msg(msg @ BridgeMessage::Feedback(_))) => match awaited {
                    Awaited::Feedback => return Ok(msg),
                    Awaited::Status => {
                        return Err(BridgeError::Protocol {
                            reason: "feedback message received while awaiting status".into(),
                            raw: None,
                        })
                    }
                },
                Ok(InboundEvent::Malformed { reason, raw }) => {
                    return Err(BridgeError::Protocol {
                        reason,
                        raw: Some(raw),
                    })
                }
                Ok(InboundEvent::Closed) => return Err(BridgeError::ConnectionClosed),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(BridgeError::Timeout {
                        awaiting: match awaited {
                            Awaited::Status => "status",
                            Awaited::Feedback => "feedback",
                        },
                        after: timeout,
                    })
                }
                Err(RecvTimeoutError::Disconnected) => return Err(BridgeError::ConnectionClosed),
            }
        }
    }
}

impl Drop for Bridge {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.writer.shutdown(std::net::Shutdown::Both);
        if let Some(handle) = self.rejector.take() {
            let _ = handle.join();
        }
        if let Some(handle) = self.reader.take() {
            let _ = handle.join();
        }
    }
}
